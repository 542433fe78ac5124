"""CLI contract: subcommands, exit codes, artifact determinism, exports."""

import filecmp
import json
import math

import pytest

from loci_lab import cli
from loci_lab.cli import EXIT_INVARIANT, EXIT_OK, EXIT_USAGE

FLAT_SMALL = {
    "schema": "loci-lab/scenario-v1",
    "name": "flat-small",
    "seed": 3,
    "model": {"catalog": "euclidean-eikonal", "n": 2},
    "source": {"kind": "hypersurface", "chart": "hyperplane", "axis": 0,
               "param_box": [[-1.0, 1.0]], "orientation": 1},
    "mesh": {"rays": 41},
    "scan": {"start": 10, "stop": 30, "stride": 4},
    "horizon": 1.5,
    "tolerances": {"integration": 1e-9, "refine": 1e-6, "cut": 1e-3,
                   "capture_radius": 0.08, "sample_dt": 0.01},
}

SPHERE_SMALL = {
    "schema": "loci-lab/scenario-v1",
    "name": "sphere-small",
    "seed": 4,
    "model": {"catalog": "sphere-chart", "n": 2},
    "source": {"kind": "hypersurface", "chart": "hyperplane", "axis": 0,
               "param_box": [[-2.0, 2.0]], "orientation": 1},
    "mesh": {"rays": 81},
    "scan": {"start": 30, "stop": 50, "stride": 5},
    "horizon": 1.9,
    "oracle": {"z_box": [-0.5, 0.5], "z_points": 3, "s_min": 0.3,
               "s_points": 4, "max_residual": 1e-6, "max_u_residual": 1e-8},
    "tolerances": {"integration": 1e-10, "refine": 1e-6, "cut": 1e-3,
                   "capture_radius": 0.08, "sample_dt": 0.004, "time": 0.01},
}


@pytest.fixture(scope="module")
def scen_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scen")
    (d / "flat-small.json").write_text(json.dumps(FLAT_SMALL))
    (d / "sphere-small.json").write_text(json.dumps(SPHERE_SMALL))
    return d


def test_validate_subcommand(scen_dir, tmp_path):
    code = cli.run_command("validate", scen_dir / "flat-small.json",
                           tmp_path, quiet=True)
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "validation.json").read_text())
    assert payload["report"]["passed"]
    assert payload["scenario_hash"]


def test_trace_subcommand(scen_dir, tmp_path):
    code = cli.run_command("trace", scen_dir / "flat-small.json",
                           tmp_path, quiet=True)
    assert code == EXIT_OK
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0].startswith("# scenario_hash=")
    assert lines[1].split(",")[:3] == ["ray", "t", "x1"]
    assert len(lines) > 10


def test_conj_scan_flat_all_none(scen_dir, tmp_path):
    code = cli.run_command("conj-scan", scen_dir / "flat-small.json",
                           tmp_path, quiet=True)
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "conj.json").read_text())
    assert all(r["t_conj"] is None for r in payload["records"])


def test_loci_sphere_small(scen_dir, tmp_path):
    code = cli.run_command("loci", scen_dir / "sphere-small.json",
                           tmp_path, quiet=True)
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "loci.json").read_text())
    for rec in payload["records"]:
        assert rec["t_conj"] == pytest.approx(math.pi / 2, abs=1e-4)
        assert rec["t_cut"] == pytest.approx(math.pi / 2, abs=5e-3)
        assert not rec["ordering_violation"]


def test_sphere_verify_exit_codes(scen_dir, tmp_path):
    code = cli.run_command("sphere-verify", scen_dir / "sphere-small.json",
                           tmp_path / "a", quiet=True)
    assert code == EXIT_OK
    # an absurd threshold turns the same run into an invariant failure
    strict = json.loads((scen_dir / "sphere-small.json").read_text())
    strict["oracle"]["max_residual"] = 1e-30
    (scen_dir / "sphere-strict.json").write_text(json.dumps(strict))
    code = cli.run_command("sphere-verify", scen_dir / "sphere-strict.json",
                           tmp_path / "b", quiet=True)
    assert code == EXIT_INVARIANT


def test_byte_identical_reruns(scen_dir, tmp_path):
    for sub, name in [("loci", "flat-small.json"),
                      ("sphere-verify", "sphere-small.json")]:
        out1 = tmp_path / f"{sub}_1"
        out2 = tmp_path / f"{sub}_2"
        assert cli.run_command(sub, scen_dir / name, out1, quiet=True) == EXIT_OK
        assert cli.run_command(sub, scen_dir / name, out2, quiet=True) == EXIT_OK
        files1 = sorted(p.name for p in out1.iterdir())
        assert files1 == sorted(p.name for p in out2.iterdir())
        for f in files1:
            if f == "manifest.json":  # timestamps live only here
                continue
            assert filecmp.cmp(out1 / f, out2 / f, shallow=False), f


def test_every_artifact_embeds_scenario_hash(scen_dir, tmp_path):
    cli.run_command("loci", scen_dir / "sphere-small.json", tmp_path,
                    quiet=True)
    from loci_lab import scenarios
    scn = scenarios.Scenario.load(scen_dir / "sphere-small.json")
    payload = json.loads((tmp_path / "loci.json").read_text())
    assert payload["scenario_hash"] == scn.hash
    assert payload["tolerances"] == scn.tolerances()
    first = (tmp_path / "loci.csv").read_text().splitlines()[0]
    assert scn.hash in first


def test_export_plotdata_roundtrip(scen_dir, tmp_path):
    cli.run_command("loci", scen_dir / "sphere-small.json", tmp_path,
                    quiet=True)
    out = tmp_path / "plot"
    code = cli.run_export_plotdata(tmp_path / "loci.json", "json", out,
                                   quiet=True)
    assert code == EXIT_OK
    again = json.loads((out / "plot_loci.json").read_text())
    original = json.loads((tmp_path / "loci.json").read_text())
    assert again["records"] == original["records"]
    code = cli.run_export_plotdata(tmp_path / "loci.json", "csv", out,
                                   quiet=True)
    assert code == EXIT_OK
    assert (out / "plot_loci.schema.json").exists()


def test_export_plotdata_empty_table(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"records": []}))
    code = cli.run_export_plotdata(empty, "csv", tmp_path / "out", quiet=True)
    assert code == EXIT_OK
    lines = (tmp_path / "out" / "plot_loci.csv").read_text().splitlines()
    assert len(lines) == 1  # header only


def test_usage_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["loci", "--scenario", str(bad),
                     "--out", str(tmp_path / "o")]) == EXIT_USAGE
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"schema": "other", "name": "x",
                                 "model": {}}))
    assert cli.main(["loci", "--scenario", str(wrong),
                     "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert cli.run_export_plotdata(tmp_path / "missing.json", "csv",
                                   tmp_path, quiet=True) == EXIT_USAGE


def test_cli_main_runs_subcommand(scen_dir, tmp_path):
    code = cli.main(["validate", "--scenario",
                     str(scen_dir / "flat-small.json"),
                     "--out", str(tmp_path / "v"), "--quiet"])
    assert code == EXIT_OK
    assert (tmp_path / "v" / "manifest.json").exists()


def test_polar_export_for_boundary(tmp_path):
    payload = {"certificate": {"kappa": 0.15},
               "boundary": [[0.0, math.pi], [0.1, math.pi]]}
    src = tmp_path / "conv.json"
    src.write_text(json.dumps(payload))
    code = cli.run_export_plotdata(src, "csv", tmp_path / "o", quiet=True)
    assert code == EXIT_OK
    lines = (tmp_path / "o" / "plot_boundary.csv").read_text().splitlines()
    assert lines[0] == "angle,radius"
    assert len(lines) == 3


def test_polynomial_model_file_scenario(tmp_path):
    model_file = tmp_path / "osc.json"
    model_file.write_text(json.dumps({
        "dimension": 2, "level": 0.0, "name": "damped-well",
        "terms": [{"coeff": 0.5, "p": [2, 0]}, {"coeff": 0.5, "p": [0, 2]},
                  {"coeff": 0.1, "x": [2, 0]}, {"coeff": 0.1, "x": [0, 2]},
                  {"coeff": -1.0}]}))
    scen = {
        "schema": "loci-lab/scenario-v1",
        "name": "poly-file",
        "seed": 9,
        "model": {"file": "osc.json", "n": 2},
        "source": {"kind": "hypersurface", "chart": "hyperplane", "axis": 0,
                   "param_box": [[-0.5, 0.5]], "orientation": 1},
        "mesh": {"rays": 11},
        "horizon": 0.8,
        "validate": {"box": 0.8, "pmax": 2.0},
    }
    sf = tmp_path / "poly-file.json"
    sf.write_text(json.dumps(scen))
    assert cli.run_command("validate", sf, tmp_path / "o", quiet=True) == EXIT_OK
    assert cli.run_command("conj-scan", sf, tmp_path / "o2", quiet=True) == EXIT_OK

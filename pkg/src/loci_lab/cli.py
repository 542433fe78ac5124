"""Scenario-driven command line front end.

Subcommands: validate, trace, conj-scan, cut-scan, loci, regularity,
sphere-verify, convexity, export-plotdata.  Exit codes: 0 success,
1 usage/configuration error, 2 mathematical-invariant violation (ordering
rows, oracle residual above threshold, convexity certificate failure).

Artifacts are deterministic for a fixed scenario file: floats are written
with shortest-roundtrip repr, JSON keys are sorted, CSV rows follow sample
order; wall-clock metadata goes only to ``manifest.json``.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import _engine, linearized, loci, models, regularity, scenarios
from . import sources as src_mod
from . import sphere
from .errors import LociLabError, ScenarioError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows, scenario=None):
    lines = []
    if scenario is not None:
        lines.append(f"# scenario_hash={scenario.hash} "
                     f"tolerances={json.dumps(scenario.tolerances(), sort_keys=True)}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8",
                          newline="\n")


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1)
                          + "\n", encoding="utf-8", newline="\n")


def write_manifest(outdir, scenario, command, extra=None):
    payload = {"command": command, "scenario": scenario.name,
               "scenario_hash": scenario.hash, "engine": _engine.BACKEND,
               "timestamp": datetime.datetime.now(datetime.timezone.utc)
               .isoformat()}
    if extra:
        payload.update(extra)
    write_json(Path(outdir) / "manifest.json", payload)


def _say(quiet, msg):
    if not quiet:
        print(msg)


# ------------------------------------------------------------- subcommands

def run_validate(scn, outdir, workers=None, quiet=False):
    model = scn.build_model()
    report = models.validate_model(model, scn.sample_states(model))
    payload = {**scn.artifact_header(), "report": report.to_dict()}
    write_json(Path(outdir) / "validation.json", payload)
    _say(quiet, f"validate: passed={report.passed}")
    return EXIT_OK if report.passed else EXIT_INVARIANT


def _scan_setup(scn):
    model = scn.build_model()
    source = scn.build_source(model)
    mesh = src_mod.source_mesh(model, source, scn.mesh_rays())
    return model, source, mesh


def run_trace(scn, outdir, workers=None, quiet=False):
    model, _, mesh = _scan_setup(scn)
    tols = scn.tolerances()
    ids = scn.scan_ids(len(mesh))
    n = model.n
    header = (["ray", "t"] + [f"x{i+1}" for i in range(n)]
              + [f"p{i+1}" for i in range(n)] + ["action", "smin_ratio"])
    rows = []
    dt = float(scn.config.get("trace_dt", 0.02))
    for sid in ids:
        s = mesh[sid]
        if not s.ok:
            continue
        traj = models.flow(model, models.PhasePoint(s.x, s.p0), scn.horizon,
                           tol=tols["integration"])
        ft = linearized.linearized_flow(model, traj, s.frame0,
                                        tol=tols["integration"])
        grid = np.arange(0.0, min(traj.t_end, ft.t_end) + 0.5 * dt, dt)
        for t in grid:
            st = traj.dense.eval(t)
            rows.append([sid, t] + list(st[:2 * n]) + [st[2 * n],
                        ft.smin_ratio_at(t)])
    write_csv(Path(outdir) / "trace.csv", header, rows, scn)
    _say(quiet, f"trace: {len(rows)} rows for {len(ids)} rays")
    return EXIT_OK


def _loci_table(scn, conj_only=False, cut_only=False, workers=None):
    model, _, mesh = _scan_setup(scn)
    tols = scn.tolerances()
    field = None
    if not conj_only:
        field = loci.build_value_field(
            model, mesh, scn.horizon, capture_radius=tols["capture_radius"],
            sample_dt=tols["sample_dt"], tol=tols["integration"],
            workers=workers)
    table = loci.scan_loci(
        model, mesh, scn.horizon, field=field,
        scan_ids=scn.scan_ids(len(mesh)), refine_tol=tols["refine"],
        flow_tol=tols["integration"], cut_tol=tols["cut"],
        angle_tol=tols["angle"], time_tol=tols["time"],
        ordering_guard=tols.get("ordering_guard"),
        conj_only=conj_only, workers=workers)
    return model, table


LOCI_HEADER = ["sample_id", "parameter", "t_conj", "t_cut", "class",
               "gamma_flag", "competitor", "conj_residual", "cut_margin",
               "ordering_violation", "clamped", "cut_exceedance", "error"]


def _table_rows(table):
    keys = list(LOCI_HEADER)
    return [[r.to_row()[k] for k in keys] for r in table.records]


def _emit_table(scn, table, outdir, stem):
    write_csv(Path(outdir) / f"{stem}.csv", LOCI_HEADER, _table_rows(table),
              scn)
    payload = {**scn.artifact_header(), "meta": table.meta,
               "records": [r.to_row() for r in table.records]}
    write_json(Path(outdir) / f"{stem}.json", payload)


def run_conj_scan(scn, outdir, workers=None, quiet=False):
    _, table = _loci_table(scn, conj_only=True, workers=workers)
    _emit_table(scn, table, outdir, "conj")
    done = sum(1 for r in table.records if r.t_conj is not None)
    _say(quiet, f"conj-scan: {done}/{len(table.records)} conjugate times")
    return EXIT_OK


def run_cut_scan(scn, outdir, workers=None, quiet=False):
    return _run_loci(scn, outdir, workers, quiet, stem="cut")


def run_loci(scn, outdir, workers=None, quiet=False):
    return _run_loci(scn, outdir, workers, quiet, stem="loci")


def _run_loci(scn, outdir, workers, quiet, stem):
    _, table = _loci_table(scn, workers=workers)
    _emit_table(scn, table, outdir, stem)
    viol = table.ordering_violations
    errs = [r for r in table.records if r.error]
    _say(quiet, f"{stem}: {len(table.records)} rows, "
                f"{len(viol)} ordering violations, {len(errs)} errors")
    return EXIT_INVARIANT if viol else EXIT_OK


def run_regularity(scn, outdir, workers=None, quiet=False):
    model, _, mesh = _scan_setup(scn)
    tols = scn.tolerances()
    cfg = scn.config.get("regularity", {})
    strides = cfg.get("strides", [4, 2])
    radii = cfg.get("lip_radii", [0.2, 0.4])
    field = loci.build_value_field(
        model, mesh, scn.horizon, capture_radius=tols["capture_radius"],
        sample_dt=tols["sample_dt"], tol=tols["integration"], workers=workers)
    runs = []
    for stride in strides:
        ids = scn.scan_ids(len(mesh))[::1]
        ids = list(range(ids[0], ids[-1] + 1, stride))
        table = loci.scan_loci(model, mesh, scn.horizon, field=field,
                               scan_ids=ids, refine_tol=tols["refine"],
                               flow_tol=tols["integration"],
                               cut_tol=tols["cut"], angle_tol=tols["angle"],
                               time_tol=tols["time"], workers=workers)
        pts = np.array([mesh[i].x for i in ids])
        tc = np.array([r.t_cut if r.t_cut is not None else np.nan
                       for r in table.records])
        tj = np.array([r.t_conj if r.t_conj is not None else np.nan
                       for r in table.records])
        ok = ~np.isnan(tc)
        entry = {"stride": stride, "samples": len(ids),
                 "cut_rows": int(np.sum(ok))}
        if np.sum(ok) >= 2:
            entry["lipschitz_t_cut"] = regularity.lipschitz_profile(
                tc[ok], pts[ok], radii)
        okj = ~np.isnan(tj)
        if np.sum(okj) >= 5:
            params = np.array([mesh[i].parameter for i in ids])[okj]
            est = regularity.semiconcavity_estimate(tj[okj], params)
            entry["semiconcavity_t_conj"] = {
                "C": est.C, "infinity_flag": est.infinity_flag,
                "witness": est.witness}
        runs.append(entry)
    stability = None
    if len(runs) >= 2:
        vals = []
        for entry in runs[:2]:
            prof = entry.get("lipschitz_t_cut") or {}
            nums = [v for v in prof.values() if v]
            vals.append(max(nums) if nums else None)
        if all(v is not None and v > 0 for v in vals):
            stability = max(vals) / min(vals)
        elif all(v is not None for v in vals):
            stability = 1.0
    payload = {**scn.artifact_header(),
               "convention": "semiconcavity uses the symmetric midpoint form",
               "runs": runs, "lipschitz_stability_ratio": stability}
    write_json(Path(outdir) / "regularity.json", payload)
    _say(quiet, f"regularity: stability ratio = {stability}")
    return EXIT_OK


def run_sphere_verify(scn, outdir, workers=None, quiet=False):
    model = scn.build_model()
    n = model.n
    tols = scn.tolerances()
    cfg = scn.config.get("oracle", {})
    zbox = cfg.get("z_box", [-1.0, 1.0])
    zpts = int(cfg.get("z_points", 9))
    s_lo = float(cfg.get("s_min", 0.1))
    s_hi = float(cfg.get("s_max", math.pi - 0.1))
    s_count = int(cfg.get("s_points", 13))
    s_values = np.linspace(s_lo, s_hi, s_count)
    axes = [np.linspace(zbox[0], zbox[1], zpts)] * (n - 1)
    zgrid = np.stack(np.meshgrid(*axes, indexing="ij"),
                     axis=-1).reshape(-1, n - 1)
    source = src_mod.hyperplane_source(n, axis=0, orientation=1)
    rows = []
    max_K = 0.0
    max_U = 0.0
    for zrow in zgrid:
        z = np.concatenate([[0.0], zrow])
        frame = src_mod.initial_lagrangian(model, source, zrow)
        exU = linearized.extract_K(frame)
        U_res = float(np.max(np.abs(exU.K - sphere.closed_form_U(z))))
        max_U = max(max_U, U_res)
        p0 = src_mod.boundary_covector(model, source, zrow)
        traj = models.flow(model, models.PhasePoint(z, p0),
                           s_hi + 0.02, tol=tols["integration"])
        for s in s_values:
            fr = linearized.vertical_arrival_frame(model, traj, float(s),
                                                   tol=tols["integration"])
            ex = linearized.extract_K(fr)
            sign, best, other = sphere.transverse_sign_report(z, float(s), ex.K)
            max_K = max(max_K, best)
            rows.append(list(zrow) + [s, best, sign, other, U_res])
    header = ([f"z{i+2}" for i in range(n - 1)]
              + ["s", "K_rel_residual", "transverse_sign", "K_rel_mirrored",
                 "U_residual"])
    write_csv(Path(outdir) / "sphere_verify.csv", header, rows, scn)
    threshold = float(cfg.get("max_residual", 1e-6))
    u_threshold = float(cfg.get("max_u_residual", 1e-8))
    payload = {**scn.artifact_header(),
               "max_K_rel_residual": max_K, "max_U_residual": max_U,
               "threshold": threshold, "u_threshold": u_threshold,
               "rows": len(rows)}
    write_json(Path(outdir) / "sphere_verify.json", payload)
    _say(quiet, f"sphere-verify: max K residual {max_K:.3e}, "
                f"max U residual {max_U:.3e}")
    return EXIT_OK if (max_K <= threshold and max_U <= u_threshold) \
        else EXIT_INVARIANT


def run_convexity(scn, outdir, workers=None, quiet=False):
    model = scn.build_model()
    cfg = scn.config.get("convexity", {})
    base = np.asarray(scn.config.get("source", {}).get("base", [-1.0, 0.0]),
                      dtype=float)
    directions = int(cfg.get("directions", 181))
    horizon = float(cfg.get("horizon", scn.horizon))
    kappa_min = float(cfg.get("kappa_min", 0.1))
    tols = scn.tolerances()
    boundary = regularity.nonfocal_domain(
        model, base, directions, horizon, refine_tol=tols["refine"],
        flow_tol=tols["integration"], workers=workers)
    cert = regularity.uniform_convexity(boundary.points, kappa_min)
    rows = [[float(a), float(r)] for a, r in zip(boundary.angles,
                                                 boundary.radii)]
    write_csv(Path(outdir) / "nonfocal_boundary.csv", ["angle", "radius"],
              rows, scn)
    payload = {**scn.artifact_header(), "certificate": cert.to_dict(),
               "directions": directions, "base": base.tolist(),
               "boundary": rows}
    write_json(Path(outdir) / "convexity.json", payload)
    _say(quiet, f"convexity: kappa={cert.kappa:.4f} passed={cert.passed}")
    return EXIT_OK if cert.passed else EXIT_INVARIANT


def run_export_plotdata(input_path, fmt, outdir, quiet=False):
    input_path = Path(input_path)
    try:
        payload = json.loads(input_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read {input_path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if "records" in payload:
        stem = "plot_loci"
        header = LOCI_HEADER
        rows = [[rec.get(k) for k in LOCI_HEADER]
                for rec in payload["records"]]
        schema = {"columns": header, "source": "loci table"}
    elif "certificate" in payload or "boundary" in payload:
        stem = "plot_boundary"
        header = ["angle", "radius"]
        rows = payload.get("boundary", [])
        schema = {"columns": header, "source": "nonfocal boundary",
                  "polar": True}
    else:
        print("error: unrecognized table payload", file=sys.stderr)
        return EXIT_USAGE
    if fmt == "csv":
        write_csv(outdir / f"{stem}.csv", header, rows)
    elif fmt == "json":
        write_json(outdir / f"{stem}.json", payload)
    else:
        print(f"error: unknown format {fmt!r}", file=sys.stderr)
        return EXIT_USAGE
    write_json(outdir / f"{stem}.schema.json", schema)
    _say(quiet, f"export: {stem}.{fmt}")
    return EXIT_OK


COMMANDS = {
    "validate": run_validate,
    "trace": run_trace,
    "conj-scan": run_conj_scan,
    "cut-scan": run_cut_scan,
    "loci": run_loci,
    "regularity": run_regularity,
    "sphere-verify": run_sphere_verify,
    "convexity": run_convexity,
}


def run_command(command, scenario_path, outdir, workers=None, quiet=False):
    """Programmatic entry point used by the CLI and the test suite."""
    scn = scenarios.Scenario.load(scenario_path)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    code = COMMANDS[command](scn, outdir, workers=workers, quiet=quiet)
    write_manifest(outdir, scn, command, {"exit_code": code})
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="loci-lab",
        description="conjugate/cut loci of Hamilton-Jacobi characteristics")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--quiet", action="store_true")
    pexp = sub.add_parser("export-plotdata")
    pexp.add_argument("--input", required=True)
    pexp.add_argument("--format", choices=["csv", "json"], default="csv")
    pexp.add_argument("--out", default="out")
    pexp.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)
    try:
        if args.command == "export-plotdata":
            return run_export_plotdata(args.input, args.format, args.out,
                                       quiet=args.quiet)
        outdir = args.out or f"out/{Path(args.scenario).stem}"
        return run_command(args.command, args.scenario, outdir,
                           workers=args.workers, quiet=args.quiet)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LociLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

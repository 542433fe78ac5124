"""Scenario files: versioned JSON descriptions of model, source, meshes,
horizons and tolerances.  The canonical-JSON SHA-256 of the scenario is
embedded in every artifact, making runs reproducible and diffable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models, sources, sphere
from .errors import ScenarioError

SCHEMA = "loci-lab/scenario-v1"

DEFAULT_TOLERANCES = {
    "integration": 1e-10,
    "refine": 1e-7,
    "angle": 1e-2,
    "time": 5e-3,
    "cut": 1e-3,
    "capture_radius": 0.06,
    "sample_dt": 2e-3,
}


def canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True).encode()


@dataclass
class Scenario:
    config: dict
    path: str
    hash: str

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            cfg = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        if cfg.get("schema") != SCHEMA:
            raise ScenarioError(
                f"scenario schema {cfg.get('schema')!r} != {SCHEMA!r}")
        cls._check(cfg)
        digest = hashlib.sha256(canonical_bytes(cfg)).hexdigest()[:16]
        return cls(config=cfg, path=str(path), hash=digest)

    @staticmethod
    def _check(cfg):
        if "model" not in cfg or "name" not in cfg:
            raise ScenarioError("scenario needs 'name' and 'model'")
        tols = {**DEFAULT_TOLERANCES, **cfg.get("tolerances", {})}
        for key, val in tols.items():
            if not (isinstance(val, (int, float)) and val > 0):
                raise ScenarioError(f"tolerance {key!r} must be positive")
        if cfg.get("horizon") is not None and cfg["horizon"] <= 0:
            raise ScenarioError("horizon must be positive")

    # ------------------------------------------------------------ accessors

    @property
    def name(self):
        return self.config["name"]

    @property
    def seed(self):
        return int(self.config.get("seed", 0))

    @property
    def horizon(self):
        return float(self.config.get("horizon", 2.0))

    def tolerances(self) -> dict:
        return {**DEFAULT_TOLERANCES, **self.config.get("tolerances", {})}

    def build_model(self):
        mc = self.config["model"]
        n = int(mc.get("n", 2))
        if "file" in mc:
            base = Path(self.path).parent / mc["file"]
            return models.polynomial_model(str(base))
        name = mc.get("catalog", "euclidean-eikonal")
        kwargs = {}
        if name == "sphere-chart-perturbed":
            kwargs["eps"] = float(mc.get("epsilon", 0.05))
            if "bumps" in mc:
                kwargs["bumps"] = sphere.bumps_from_config(mc["bumps"], n)
        return models.catalog(name, n=n, **kwargs)

    def build_source(self, model):
        sc = self.config.get("source")
        if sc is None:
            raise ScenarioError("scenario has no 'source' section")
        return sources.from_config(sc, model.n)

    def mesh_rays(self):
        return int(self.config.get("mesh", {}).get("rays", 41))

    def scan_ids(self, total):
        scan = self.config.get("scan")
        if scan is None:
            return list(range(total))
        start = int(scan.get("start", 0))
        stop = int(scan.get("stop", total - 1))
        stride = int(scan.get("stride", 1))
        if not (0 <= start <= stop < total and stride >= 1):
            raise ScenarioError("scan indices out of range for the mesh")
        return list(range(start, stop + 1, stride))

    def artifact_header(self) -> dict:
        return {"scenario": self.name, "scenario_hash": self.hash,
                "tolerances": self.tolerances()}

    def sample_states(self, model, count=24):
        """Deterministic phase-space samples for validation, seeded."""
        rng = np.random.default_rng(self.seed or 1)
        box = float(self.config.get("validate", {}).get("box", 1.5))
        pmax = float(self.config.get("validate", {}).get("pmax", 3.0))
        out = []
        for _ in range(count):
            x = rng.uniform(-box, box, model.n)
            p = rng.uniform(-pmax, pmax, model.n)
            out.append(models.PhasePoint(x, p))
        return out

"""Sources of characteristics: Dirichlet hypersurfaces and point sources.

A hypersurface source owns a chart ``u -> x``, an analytic tangent frame,
and an orientation sign; it produces boundary covectors (conormal roots of
H = level), initial Lagrangian frames (the tangent space to the graph of
du over S extended by the Hamiltonian direction), and the exponential map.
Point sources replace the frame by the vertical subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import BeyondMaximalTime, SourceError
from .linearized import LagrangianFrame, isotropy_residual, vertical_frame
from .models import PhasePoint, flow

_RICH_H = 1e-4


@dataclass
class SourceSpec:
    """Hypersurface patch (chart + tangent frame + orientation) or a point."""

    kind: str                      # "hypersurface" | "point"
    name: str = "source"
    chart: Optional[Callable] = None           # u -> position
    tangent_frame: Optional[Callable] = None   # u -> (n, n-1)
    param_box: Optional[list] = None           # [(lo, hi), ...]
    orientation: int = 1
    base: Optional[np.ndarray] = None          # point source location
    direction_box: Optional[list] = None       # angle box for point sources

    def __post_init__(self):
        if self.kind not in ("hypersurface", "point"):
            raise SourceError(f"unknown source kind {self.kind!r}")
        if self.kind == "hypersurface" and (self.chart is None
                                            or self.tangent_frame is None):
            raise SourceError("hypersurface source needs chart and tangent_frame")
        if self.kind == "point":
            self.base = np.asarray(self.base, dtype=float)


@dataclass
class SourceSample:
    """Per-parameter data: boundary point, covector du, initial frame."""

    id: int
    parameter: np.ndarray
    x: Optional[np.ndarray] = None
    p0: Optional[np.ndarray] = None
    frame0: Optional[LagrangianFrame] = None
    ok: bool = False
    error: Optional[str] = None
    diagnostics: dict = field(default_factory=dict)


# ----------------------------------------------------------------- builders

def hyperplane_source(n, axis=0, orientation=1, param_box=None,
                      name="hyperplane"):
    """The hyperplane {x_axis = 0}, parametrized by the remaining coords."""
    others = [i for i in range(n) if i != axis]

    def chart(u):
        x = np.zeros(n)
        x[others] = np.asarray(u, dtype=float)
        return x

    def tangent(u):
        T = np.zeros((n, n - 1))
        for j, i in enumerate(others):
            T[i, j] = 1.0
        return T

    box = param_box if param_box is not None else [(-1.0, 1.0)] * (n - 1)
    return SourceSpec(kind="hypersurface", name=name, chart=chart,
                      tangent_frame=tangent, param_box=box,
                      orientation=orientation)


def circle_source(radius=1.0, orientation=-1, param_box=None, name="circle"):
    """The circle |x| = radius in the plane (orientation -1 points inward)."""

    def chart(u):
        a = float(np.asarray(u).ravel()[0])
        return radius * np.array([math.cos(a), math.sin(a)])

    def tangent(u):
        a = float(np.asarray(u).ravel()[0])
        return radius * np.array([[-math.sin(a)], [math.cos(a)]])

    box = param_box if param_box is not None else [(0.0, 2.0 * math.pi)]
    return SourceSpec(kind="hypersurface", name=name, chart=chart,
                      tangent_frame=tangent, param_box=box,
                      orientation=orientation)


def point_source(base, direction_box=None, name="point"):
    base = np.asarray(base, dtype=float)
    n = base.size
    if direction_box is None:
        direction_box = ([(0.0, 2.0 * math.pi)] if n == 2
                         else [(0.0, 2.0 * math.pi),
                               (-math.pi / 2, math.pi / 2)][:n - 1])
    return SourceSpec(kind="point", name=name, base=base,
                      direction_box=direction_box)


def from_config(cfg: dict, n: int) -> SourceSpec:
    """Source from scenario JSON (kind, chart id or point coords, box,
    orientation sign)."""
    kind = cfg.get("kind", "hypersurface")
    if kind == "point":
        return point_source(cfg["base"], cfg.get("direction_box"),
                            name=cfg.get("name", "point"))
    chart_id = cfg.get("chart", "hyperplane")
    box = cfg.get("param_box")
    box = [tuple(b) for b in box] if box else None
    orient = int(cfg.get("orientation", 1))
    if chart_id == "hyperplane":
        return hyperplane_source(n, axis=int(cfg.get("axis", 0)),
                                 orientation=orient, param_box=box,
                                 name=cfg.get("name", "hyperplane"))
    if chart_id == "circle":
        return circle_source(radius=float(cfg.get("radius", 1.0)),
                             orientation=orient, param_box=box,
                             name=cfg.get("name", "circle"))
    raise SourceError(f"unknown chart id {chart_id!r}")


# --------------------------------------------------------------- directions

def unit_direction(angles):
    """Unit vector from 1 (n=2) or 2 (n=3) angles."""
    a = np.atleast_1d(np.asarray(angles, dtype=float))
    if a.size == 1:
        return np.array([math.cos(a[0]), math.sin(a[0])])
    if a.size == 2:
        cb = math.cos(a[1])
        return np.array([math.cos(a[0]) * cb, math.sin(a[0]) * cb,
                         math.sin(a[1])])
    raise SourceError("direction meshes support n = 2 and 3")


def _conormal(tangent: np.ndarray) -> np.ndarray:
    """Unit conormal as the generalized cross product of the tangent
    columns: continuous in the parameter and globally oriented, so the
    orientation sign means the same thing all around a closed patch."""
    tangent = np.asarray(tangent, dtype=float)
    n = tangent.shape[0]
    nrm = np.empty(n)
    rows = np.arange(n)
    for i in range(n):
        minor = tangent[rows != i, :]
        nrm[i] = (-1.0) ** i * np.linalg.det(minor)
    length = float(np.linalg.norm(nrm))
    if length == 0.0:
        raise SourceError("tangent frame is degenerate (zero conormal)")
    return nrm / length


def _level_root_along(model, x, direction, side, max_expand=60):
    """Root s of H(x, s*direction) = level with sign(s) = side."""
    lvl = model.level

    def f(s):
        return model.eval_H(x, s * direction) - lvl

    if f(0.0) >= 0.0:
        raise SourceError("source not admissible here: H(x,0) >= level")
    hi = float(side)
    for _ in range(max_expand):
        if f(hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise SourceError("source not admissible here: no conormal root")
    lo = 0.0
    s = brentq(f, min(lo, hi), max(lo, hi), xtol=1e-15, rtol=8.9e-16)
    # one Newton polish for the 1e-12 residual contract
    gp = np.asarray(model.grad_p(x, s * direction))
    slope = float(gp @ direction)
    if slope != 0.0:
        s -= f(s) / slope
    if abs(f(s)) > 1e-12:
        raise SourceError(f"conormal root residual {abs(f(s)):.2e} > 1e-12")
    return s


def boundary_covector(model, source: SourceSpec, parameter) -> np.ndarray:
    """Covector du(x) on the hypersurface: the conormal root of H = level
    whose characteristic enters the domain per the orientation sign."""
    if source.kind != "hypersurface":
        raise SourceError("boundary_covector needs a hypersurface source")
    u = np.atleast_1d(np.asarray(parameter, dtype=float))
    x = source.chart(u)
    nrm = _conormal(np.asarray(source.tangent_frame(u), dtype=float))
    for side in (+1.0, -1.0):
        s = _level_root_along(model, x, nrm, side)
        v = np.asarray(model.grad_p(x, s * nrm))
        if source.orientation * float(v @ nrm) > 0.0:
            return s * nrm
    raise SourceError("no conormal root matches the inward orientation")


def point_covector(model, source: SourceSpec, parameter) -> np.ndarray:
    """Covector of magnitude solving H = level along a direction mesh angle."""
    d = unit_direction(parameter)
    s = _level_root_along(model, source.base, d, +1.0)
    return s * d


def hamiltonian_direction(model, x, p) -> np.ndarray:
    """(H_p, -H_x): the phase velocity, an exact linearized solution."""
    return np.concatenate([np.asarray(model.grad_p(x, p)),
                           -np.asarray(model.grad_x(x, p))])


def initial_lagrangian(model, source: SourceSpec, parameter,
                       isotropy_tol=1e-8) -> LagrangianFrame:
    """Initial frame U(x): tangent directions of the graph of du over S
    (Richardson-extrapolated parameter differences) plus the Hamiltonian
    direction; point sources get the vertical frame."""
    if source.kind == "point":
        return vertical_frame(model.n)
    u = np.atleast_1d(np.asarray(parameter, dtype=float))
    n = model.n
    tang = np.asarray(source.tangent_frame(u), dtype=float)
    if np.linalg.matrix_rank(tang, tol=1e-12) < n - 1:
        raise SourceError("tangent frame is rank-deficient at this parameter")
    x = source.chart(u)
    p0 = boundary_covector(model, source, u)

    def section(uu):
        return boundary_covector(model, source, uu)

    cols = []
    for i in range(n - 1):
        h = _RICH_H * (1.0 + abs(float(u[i])))
        dtau = _richardson(lambda uu: np.asarray(source.chart(uu), dtype=float),
                           u, i, h)
        dp = _richardson(section, u, i, h)
        cols.append(np.concatenate([dtau, dp]))
    cols.append(hamiltonian_direction(model, x, p0))
    mat = np.stack(cols, axis=1)
    if np.linalg.matrix_rank(mat, tol=1e-9) < n:
        raise SourceError("assembled initial frame is rank-deficient")
    resid = isotropy_residual(mat)
    if resid > isotropy_tol:
        raise SourceError(f"initial frame isotropy residual {resid:.2e} "
                          f"exceeds {isotropy_tol:.1e}")
    return LagrangianFrame(columns=mat, isotropy=resid)


def _richardson(fun, u, i, h):
    def central(hh):
        up = u.copy(); up[i] += hh
        um = u.copy(); um[i] -= hh
        return (fun(up) - fun(um)) / (2.0 * hh)

    return (4.0 * central(h / 2.0) - central(h)) / 3.0


def make_sample(model, source: SourceSpec, parameter, sample_id=0) -> SourceSample:
    s = SourceSample(id=sample_id,
                     parameter=np.atleast_1d(np.asarray(parameter, dtype=float)))
    try:
        if source.kind == "point":
            s.x = source.base.copy()
            s.p0 = point_covector(model, source, s.parameter)
            s.frame0 = vertical_frame(model.n)
        else:
            s.x = np.asarray(source.chart(s.parameter), dtype=float)
            s.p0 = boundary_covector(model, source, s.parameter)
            s.frame0 = initial_lagrangian(model, source, s.parameter)
            nrm = _conormal(np.asarray(source.tangent_frame(s.parameter)))
            vel = np.asarray(model.grad_p(s.x, s.p0))
            s.diagnostics["transversal"] = float(vel @ nrm)
        s.diagnostics["H_residual"] = abs(model.eval_H(s.x, s.p0) - model.level)
        s.diagnostics["isotropy"] = s.frame0.isotropy
        s.ok = True
    except Exception as exc:
        s.error = f"{type(exc).__name__}: {exc}"
    return s


def parameter_grid(box, resolution):
    """Deterministic tensor grid over the parameter box (inclusive ends)."""
    if isinstance(resolution, int):
        resolution = [resolution] * len(box)
    if any(r < 2 for r in resolution):
        raise SourceError("resolution must be >= 2 per parameter axis")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(box, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def source_mesh(model, source: SourceSpec, resolution) -> list[SourceSample]:
    """Tensor-grid sampling with per-sample failures marked, not dropped.

    Coinciding sample positions (a non-injective chart over the box, e.g. a
    closed curve sampled across its period) mark the later duplicate
    instead of silently producing twin rays.
    """
    box = source.param_box if source.kind == "hypersurface" else source.direction_box
    grid = parameter_grid(box, resolution)
    mesh = [make_sample(model, source, grid[i], sample_id=i)
            for i in range(grid.shape[0])]
    if source.kind == "hypersurface":
        seen = {}
        for s in mesh:
            if not s.ok:
                continue
            key = tuple(np.round(s.x, 12))
            if key in seen:
                s.ok = False
                s.error = (f"chart not injective: position duplicates "
                           f"sample {seen[key]}")
            else:
                seen[key] = s.id
    return mesh


def exp_map(model, sample: SourceSample, t, tol=1e-10):
    """Position of the characteristic from (x, du(x)) at time ``t``."""
    if not sample.ok:
        raise SourceError(f"sample {sample.id} is not admissible: {sample.error}")
    traj = flow(model, PhasePoint(sample.x, sample.p0), float(t), tol=tol)
    if traj.escaped and abs(traj.t_end) < abs(float(t)):
        raise BeyondMaximalTime(
            f"characteristic escaped at t={traj.t_end:.6g} before {t:g}")
    return traj.position_at(float(t))

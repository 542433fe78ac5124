"""Empirical regularity probes: Lipschitz and semiconcavity estimates of
sampled functions, tangent nonfocal domains, and strict-uniform-convexity
certificates for their boundaries.

Estimates are reported with witnesses so a failure reproduces as a
one-liner.  Semiconcavity uses the symmetric midpoint convention

    mu f(x) + (1-mu) f(y) - f(mu x + (1-mu) y) <= mu (1-mu) C |x-y|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import LociLabError
from .loci import conjugate_time
from .sources import make_sample, point_source


# ------------------------------------------------------------ lipschitz

@dataclass
class LipschitzEstimate:
    value: float
    radius: float
    pair: tuple
    npairs: int


def lipschitz_estimate(values, points, radius) -> LipschitzEstimate:
    """sup |f(a)-f(b)| / dist(a,b) over sample pairs within ``radius``."""
    v = np.asarray(values, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] != v.size:
        pts = pts.T
    m = v.size
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(m, k=1)
    d = dist[iu]
    ok = (d > 0) & (d <= radius)
    if not np.any(ok):
        raise LociLabError("no sample pair within the requested radius")
    quot = np.abs(v[iu[0]] - v[iu[1]])[ok] / d[ok]
    k = int(np.argmax(quot))
    ia = iu[0][ok][k]
    ib = iu[1][ok][k]
    return LipschitzEstimate(float(quot[k]), float(radius),
                             (int(ia), int(ib)), int(np.sum(ok)))


def lipschitz_profile(values, points, radii):
    out = {}
    for r in radii:
        try:
            out[float(r)] = lipschitz_estimate(values, points, r).value
        except LociLabError:
            out[float(r)] = None
    return out


# --------------------------------------------------------- semiconcavity

@dataclass
class SemiconcavityEstimate:
    C: float
    infinity_flag: bool
    witness: Optional[tuple]
    scale_profile: dict
    delta: float


def _grid_pairs(shape):
    """Index pairs of a regular grid whose mu-combinations stay on-grid,
    restricted to axis and main-diagonal directions for multi-axis grids."""
    idx = np.indices(shape).reshape(len(shape), -1).T
    m = idx.shape[0]
    if len(shape) == 1:
        for i in range(m):
            for j in range(i + 1, m):
                yield i, j, idx[i], idx[j]
        return
    strides = []
    for ax in range(len(shape)):
        e = np.zeros(len(shape), dtype=int)
        e[ax] = 1
        strides.append(e)
    strides.append(np.ones(len(shape), dtype=int))
    strides.append(np.array([1] + [-1] * (len(shape) - 1), dtype=int))
    lin = {tuple(t): k for k, t in enumerate(map(tuple, idx))}
    for k, t in enumerate(idx):
        for s in strides:
            for step in range(1, max(shape)):
                u = t + step * s
                key = tuple(u)
                if key not in lin:
                    break
                yield k, lin[key], t, u


def semiconcavity_estimate(values, points, delta=None,
                           mus=(0.25, 0.5, 0.75)) -> SemiconcavityEstimate:
    """Minimal C satisfying the midpoint inequality over grid triples inside
    a delta-ball, with an infinity flag when C blows up as |x-y| -> 0.

    ``points`` is a regular grid: a 1-D array or an (m, d) array whose rows
    enumerate a tensor grid in row-major order (shape inferred).
    """
    v = np.asarray(values, dtype=float)
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    m, d = pts.shape
    if d == 1:
        shape = (m,)
    else:
        uniq = [np.unique(np.round(pts[:, ax], 12)).size for ax in range(d)]
        if int(np.prod(uniq)) != m:
            raise LociLabError("points do not enumerate a regular grid")
        shape = tuple(uniq)
    v_grid = v.reshape(shape)
    p_grid = pts.reshape(shape + (d,))
    center = pts.mean(axis=0)
    if delta is None:
        delta = float(np.max(np.linalg.norm(pts - center, axis=1))) + 1e-12

    best = 0.0
    witness = None
    triples = 0
    by_scale: dict = {}
    for i, j, ti, tj in _grid_pairs(shape):
        xi = p_grid[tuple(ti)]
        xj = p_grid[tuple(tj)]
        if (np.linalg.norm(xi - center) > delta
                or np.linalg.norm(xj - center) > delta):
            continue
        dist2 = float(np.sum((xi - xj) ** 2))
        if dist2 == 0.0:
            continue
        for mu in mus:
            tm = mu * np.asarray(ti) + (1 - mu) * np.asarray(tj)
            tm_round = np.round(tm).astype(int)
            if np.max(np.abs(tm - tm_round)) > 1e-9:
                continue
            fm = v_grid[tuple(tm_round)]
            lhs = mu * v_grid[tuple(ti)] + (1 - mu) * v_grid[tuple(tj)] - fm
            ratio = lhs / (mu * (1 - mu) * dist2)
            triples += 1
            scale = round(math.log2(math.sqrt(dist2) + 1e-300), 6)
            key = 2.0 ** round(math.log2(math.sqrt(dist2)))
            by_scale[key] = max(by_scale.get(key, 0.0), ratio)
            if ratio > best:
                best = ratio
                witness = (i, j, mu)
    if triples == 0:
        raise LociLabError("mesh supports no on-grid midpoints")

    flag = False
    scales = sorted(by_scale)
    if len(scales) >= 3 and best > 1e-9:
        s = np.array(scales[:3])
        c = np.array([max(by_scale[k], 1e-300) for k in scales[:3]])
        if np.all(c > 0.1 * best):
            slope = np.polyfit(np.log(s), np.log(c), 1)[0]
            if slope < -0.5:
                flag = True
    return SemiconcavityEstimate(float(max(best, 0.0)), flag, witness,
                                 {float(k): float(val) for k, val in by_scale.items()},
                                 float(delta))


# -------------------------------------------------------- nonfocal domain

@dataclass
class NonfocalBoundary:
    angles: np.ndarray
    radii: np.ndarray
    points: np.ndarray
    base: np.ndarray


def nonfocal_domain(model, base_point, resolution, horizon,
                    refine_tol=1e-6, flow_tol=1e-10,
                    workers=None) -> NonfocalBoundary:
    """Boundary of the tangent nonfocal domain of a point: t_conj(v) * v
    over a full direction mesh, in metric-orthonormal tangent coordinates.

    Directions are covector angles b_k = 2 pi k / resolution (no duplicated
    endpoint).  Any direction without a conjugate time below the horizon is
    an error listing the offending angles.
    """
    if model.n != 2:
        raise LociLabError("nonfocal boundaries are implemented for n = 2")
    from concurrent.futures import ThreadPoolExecutor

    from .loci import _worker_count

    base_point = np.asarray(base_point, dtype=float)
    src = point_source(base_point, direction_box=[(0.0, 2.0 * math.pi)])
    angles = 2.0 * math.pi * np.arange(resolution) / resolution

    def one(k):
        sample = make_sample(model, src, [angles[k]], sample_id=k)
        if not sample.ok:
            return None
        res = conjugate_time(model, sample, horizon, refine_tol=refine_tol,
                             tol=flow_tol)
        return res.t

    with ThreadPoolExecutor(max_workers=_worker_count(workers)) as pool:
        radii = list(pool.map(one, range(resolution)))
    missing = [float(angles[k]) for k, r in enumerate(radii) if r is None]
    if missing:
        raise LociLabError(
            f"{len(missing)} directions had no conjugate time below the "
            f"horizon; first few: {missing[:5]}")
    radii = np.asarray(radii, dtype=float)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return NonfocalBoundary(angles=angles, radii=radii,
                            points=radii[:, None] * dirs, base=base_point)


# ------------------------------------------------------ convexity cert

_DEFAULT_LAGS = (2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 360)


@dataclass
class ConvexityCertificate:
    kappa_chord: float
    kappa_ball: float
    kappa_min_requested: float
    passed: bool
    samples: int
    witness_chord: Optional[tuple]
    witness_ball: Optional[int]
    meta: dict = field(default_factory=dict)

    @property
    def kappa(self):
        return min(self.kappa_chord, self.kappa_ball)

    def to_dict(self):
        return {"kappa": self.kappa, "kappa_chord": self.kappa_chord,
                "kappa_ball": self.kappa_ball,
                "kappa_min_requested": self.kappa_min_requested,
                "passed": self.passed, "samples": self.samples,
                "witness_chord": self.witness_chord,
                "witness_ball": self.witness_ball, "meta": self.meta}


def _polyline_distance(q, pts, tree, window=4):
    """Distance from q to the closed sampled boundary polyline, searching
    segments near the nearest vertices."""
    m = len(pts)
    _, nearest = tree.query(q, k=min(2 * window, m))
    best = float("inf")
    for v in np.atleast_1d(nearest):
        for j in (v - 1, v):
            a = pts[j % m]
            b = pts[(j + 1) % m]
            ab = b - a
            denom = float(ab @ ab)
            t = 0.0 if denom == 0 else float(np.clip((q - a) @ ab / denom, 0, 1))
            best = min(best, float(np.linalg.norm(q - (a + t * ab))))
    return best


def uniform_convexity(boundary_points, kappa_min, center=None, lags=None,
                      lambdas=(0.25, 0.5, 0.75), neighbor_delta=0.5,
                      resolution_eta=0.05) -> ConvexityCertificate:
    """Strict-uniform-convexity certificate from boundary samples (n = 2).

    kappa_chord: largest kappa passing the chord inequality
    d(lx+(1-l)y, boundary) >= kappa l(1-l)|x-y|^2 over a deterministic
    ladder of index lags; pairs whose chord depth is within the polyline
    sagitta over ``resolution_eta`` are excluded (resolution error bound).
    kappa_ball: largest kappa such that at every sample an enclosing ball
    of radius 1/kappa contains all neighbors within ``neighbor_delta``.
    """
    from scipy.spatial import cKDTree

    pts = np.asarray(boundary_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise LociLabError("convexity certificates are implemented for n = 2")
    m = pts.shape[0]
    ctr = np.asarray(center, dtype=float) if center is not None \
        else pts.mean(axis=0)
    rel = pts - ctr
    radii = np.linalg.norm(rel, axis=1)
    if np.any(radii <= 0):
        raise LociLabError("boundary not star-shaped about the center")
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    order = np.argsort(ang, kind="stable")
    if np.unique(np.round(ang[order], 12)).size != m:
        raise LociLabError("boundary not star-shaped: duplicate angles")
    pts = pts[order]
    tree = cKDTree(pts)

    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    sag = 0.0
    for i in range(m):
        a = pts[(i - 1) % m]
        b = pts[(i + 1) % m]
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else float(np.clip((pts[i] - a) @ ab / denom, 0, 1))
        sag = max(sag, float(np.linalg.norm(pts[i] - (a + t * ab))))
    # polyline depth error <= sagitta; relative kappa bias ~ 2R*sag/qval,
    # so exclude chords below the floor keeping the bias <= resolution_eta
    r_scale = float(np.max(np.linalg.norm(pts - ctr, axis=1)))
    min_depth = 2.0 * r_scale * sag / resolution_eta

    lag_set = [L for L in (lags or _DEFAULT_LAGS) if 0 < L <= m // 2]
    kappa_chord = float("inf")
    wit_chord = None
    pairs_used = 0
    for L in lag_set:
        for i in range(m):
            j = (i + L) % m
            x = pts[i]
            y = pts[j]
            dist2 = float(np.sum((x - y) ** 2))
            for lam in lambdas:
                qval = lam * (1 - lam) * dist2
                if qval < min_depth:
                    continue
                q = lam * x + (1 - lam) * y
                ratio = _polyline_distance(q, pts, tree) / qval
                pairs_used += 1
                if ratio < kappa_chord:
                    kappa_chord = ratio
                    wit_chord = (int(i), int(j), float(lam))
    if pairs_used == 0:
        raise LociLabError("no chord pair above the resolution floor; "
                           "boundary too coarse")

    kappa_ball = float("inf")
    wit_ball = None
    for i in range(m):
        tau = pts[(i + 1) % m] - pts[(i - 1) % m]
        nrm = np.array([-tau[1], tau[0]])
        nn = float(np.linalg.norm(nrm))
        if nn == 0:
            raise LociLabError(f"degenerate tangent at sample {i}")
        nrm /= nn
        if float(nrm @ (ctr - pts[i])) < 0:
            nrm = -nrm
        idx = tree.query_ball_point(pts[i], neighbor_delta)
        for j in idx:
            if j == i:
                continue
            dq = pts[j] - pts[i]
            d2 = float(dq @ dq)
            if d2 == 0:
                continue
            kb = 2.0 * float(nrm @ dq) / d2
            if kb < kappa_ball:
                kappa_ball = kb
                wit_ball = int(i)
    kappa_ball = max(kappa_ball, 0.0)

    passed = min(kappa_chord, kappa_ball) >= kappa_min
    return ConvexityCertificate(
        kappa_chord=float(kappa_chord), kappa_ball=float(kappa_ball),
        kappa_min_requested=float(kappa_min), passed=bool(passed),
        samples=m, witness_chord=wit_chord, witness_ball=wit_ball,
        meta={"lags": lag_set, "lambdas": list(lambdas),
              "sagitta": sag, "resolution_eta": resolution_eta,
              "min_chord_depth": min_depth, "pairs_used": pairs_used,
              "max_adjacent_spacing": float(np.max(seg)),
              "neighbor_delta": neighbor_delta})


# ------------------------------------------------------ hessian proxy

def hessian_bound_estimate(values, spacing=None, periodic=True):
    """Max second-difference quotient of samples on a regular 1-D direction
    mesh: a proxy for sup |D2 f| (how flat the function is)."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 5:
        raise LociLabError("need a 1-D mesh with at least 5 points per axis")
    h = float(spacing) if spacing is not None else 1.0
    if periodic:
        second = (np.roll(v, -1) - 2 * v + np.roll(v, 1)) / h**2
    else:
        second = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    return float(np.max(np.abs(second)))


# ------------------------------------------------------------- reporting

@dataclass
class RegularityReport:
    function_id: str
    mesh_spec: dict
    lipschitz: dict
    semiconcavity: Optional[dict]
    notes: list

    def to_dict(self):
        return {"function_id": self.function_id, "mesh_spec": self.mesh_spec,
                "lipschitz": self.lipschitz,
                "semiconcavity": self.semiconcavity, "notes": self.notes}


def regularity_report(function_id, values, points, radii,
                      semiconcavity_delta=None, mesh_spec=None):
    """Bundle Lipschitz profile + semiconcavity estimate for a sampled map."""
    values = np.asarray(values, dtype=float)
    lip = lipschitz_profile(values, points, radii)
    semi = None
    try:
        est = semiconcavity_estimate(values, points, delta=semiconcavity_delta)
        semi = {"C": est.C, "infinity_flag": est.infinity_flag,
                "witness": est.witness, "delta": est.delta}
    except LociLabError as exc:
        semi = {"error": str(exc)}
    return RegularityReport(
        function_id=function_id, mesh_spec=mesh_spec or {},
        lipschitz=lip, semiconcavity=semi,
        notes=["semiconcavity uses the symmetric midpoint convention",
               "estimates are finite-sample; witnesses reproduce them"])

"""Conjugate-time and cut-time detection, cut-point classification, scans.

Conjugate times come from the propagated source frame: the scale-free
singularity monitor sigma_min/sigma_max of its Hblock is scanned on a dense
grid, the first zero is bracketed by the sign of det(Hblock) when it flips
(transversal case) or by a local dip otherwise (even multiplicity), and
refined by bisection/golden section.

The solution value u is a Lax-Oleinik style minimum over a stored family
of characteristics; a ray's cut time is the first time a stored pass of the
family certifies that the along-ray action is no longer minimal:

    along(t) - action(pass) > local_Lip * dist(pass) + tol.

Along-ray actions dominate u at every pass position, so the certificate
cannot fire before the cut; after it, passes of competing branches sit at
distance O(t - t_cut) regardless of mesh spacing.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import conformal
from .errors import DensityError, LociLabError
from .linearized import linearized_flow
from .models import PhasePoint, flow
from .sources import SourceSample

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("LOCI_LAB_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------- conjugate times

@dataclass
class ConjugateResult:
    t: Optional[float]
    method: str = "none"
    residual_ratio: float = float("nan")
    det_sign_change: bool = False
    min_ratio_seen: float = float("inf")
    horizon: float = float("nan")
    escaped_at: Optional[float] = None
    frames: object = None


def conjugate_time(model, sample: SourceSample, horizon, refine_tol=1e-6,
                   tol=1e-10, grid_dt=0.02, accept_ratio=1e-5, dip_ratio=0.05,
                   traj=None, keep_frames=False) -> ConjugateResult:
    """First singular time of the propagated source frame up to ``horizon``."""
    if not sample.ok:
        raise LociLabError(f"sample {sample.id} not admissible: {sample.error}")
    if traj is None:
        traj = flow(model, PhasePoint(sample.x, sample.p0), horizon, tol=tol)
    h_eff = min(horizon, traj.t_end)
    ft = linearized_flow(model, traj, sample.frame0, tol=tol, t1=h_eff)
    h_eff = min(h_eff, ft.t_end)
    out = ConjugateResult(None, horizon=h_eff,
                          escaped_at=traj.t_end if traj.escaped else None,
                          frames=ft if keep_frames else None)

    ts = [0.0]
    for knot in ft.times:
        prev = ts[-1]
        if knot <= prev:
            continue
        extra = int(math.ceil((knot - prev) / grid_dt))
        for j in range(1, extra + 1):
            ts.append(prev + (knot - prev) * j / extra)
    ts = np.array([t for t in ts if 1e-9 < t <= h_eff])
    if len(ts) < 2:
        return out

    hblocks = ft.hblocks_at(ts)
    sv = np.linalg.svd(hblocks, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(sv[:, 0] > 0, sv[:, -1] / sv[:, 0], 0.0)
    dets = np.linalg.det(hblocks)
    out.min_ratio_seen = float(np.min(ratios))

    def refine_sign(a, b):
        fa = ft.det_h_at(a)
        for _ in range(200):
            if b - a < refine_tol:
                break
            mdl = 0.5 * (a + b)
            fm = ft.det_h_at(mdl)
            if (fa < 0) != (fm < 0):
                b = mdl
            else:
                a, fa = mdl, fm
        return 0.5 * (a + b)

    def refine_dip(a, b):
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        f1 = ft.smin_ratio_at(x1)
        f2 = ft.smin_ratio_at(x2)
        for _ in range(200):
            if b - a < refine_tol:
                break
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - GOLDEN * (b - a)
                f1 = ft.smin_ratio_at(x1)
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + GOLDEN * (b - a)
                f2 = ft.smin_ratio_at(x2)
        return 0.5 * (a + b)

    for i in range(1, len(ts)):
        if (dets[i] < 0) != (dets[i - 1] < 0):
            t_star = refine_sign(ts[i - 1], ts[i])
            out.t = t_star
            out.method = "det-bisection"
            out.residual_ratio = ft.smin_ratio_at(t_star)
            out.det_sign_change = True
            return out
        is_dip = (ratios[i] < dip_ratio
                  and (i + 1 == len(ts) or ratios[i] <= ratios[i + 1])
                  and ratios[i] <= ratios[i - 1])
        if is_dip:
            lo = ts[i - 1]
            hi = ts[i + 1] if i + 1 < len(ts) else ts[i]
            t_star = refine_dip(lo, hi)
            r_star = ft.smin_ratio_at(t_star)
            out.min_ratio_seen = min(out.min_ratio_seen, r_star)
            if r_star <= accept_ratio:
                out.t = t_star
                out.method = "dip-golden"
                out.residual_ratio = r_star
                out.det_sign_change = (
                    (ft.det_h_at(max(1e-9, t_star - 10 * refine_tol)) < 0)
                    != (ft.det_h_at(min(h_eff, t_star + 10 * refine_tol)) < 0))
                return out
    return out


def gap_eigen_conjugate_time(model, traj, frame0, horizon, refine_tol=1e-6,
                             tol=1e-10, grid=None):
    """Secondary detector: first singularity of K(x,t) - K_U via the
    smallest |eigenvalue| of the gap, each K(x,t) from a backward vertical
    frame (oracle-convention cross check; much costlier)."""
    from .linearized import extract_K, vertical_arrival_frame

    K_U = extract_K(frame0).K
    if K_U is None:
        raise LociLabError("source frame is vertical; gap detector undefined")
    grid = grid if grid is not None else np.linspace(0.05, horizon, 40)

    def gap_min(t):
        ex = extract_K(vertical_arrival_frame(model, traj, float(t), tol=tol))
        if ex.degenerate:
            return float("inf")
        return float(np.min(np.abs(np.linalg.eigvalsh(ex.K - K_U))))

    vals = np.array([gap_min(t) for t in grid])
    scale = float(np.median(vals[np.isfinite(vals)])) or 1.0
    for i in range(1, len(grid)):
        if vals[i] < 0.5 * scale \
                and (i + 1 == len(grid) or vals[i] <= vals[i + 1]) \
                and vals[i] <= vals[i - 1]:
            a = grid[i - 1]
            b = grid[i + 1] if i + 1 < len(grid) else grid[i]
            x1 = b - GOLDEN * (b - a)
            x2 = a + GOLDEN * (b - a)
            f1, f2 = gap_min(x1), gap_min(x2)
            while b - a > refine_tol:
                if f1 <= f2:
                    b, x2, f2 = x2, x1, f1
                    x1 = b - GOLDEN * (b - a)
                    f1 = gap_min(x1)
                else:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + GOLDEN * (b - a)
                    f2 = gap_min(x2)
            t_star = 0.5 * (a + b)
            if gap_min(t_star) <= 1e-4 * scale:
                return t_star
    return None


# --------------------------------------------------------------- value field

@dataclass
class FieldValue:
    value: Optional[float]
    correction: float
    ray: Optional[int]
    dist: float
    lip_local: float
    second_value: Optional[float] = None
    second_ray: Optional[int] = None


@dataclass
class BeatResult:
    found: bool
    margin: float = -float("inf")
    ray: Optional[int] = None
    t_pass: float = float("nan")
    action_pass: float = float("nan")
    dist: float = float("nan")
    velocity: Optional[np.ndarray] = None


class ValueField:
    """Minimal-action query structure over a stored characteristic family.

    Each ray is densely sampled at ``sample_dt``; queries gather all stored
    passes within the capture radius and report the minimal action, the
    argmin ray, and a local Lipschitz correction (max |p| among the capture
    set, inflated by ``lip_margin``).
    """

    def __init__(self, model, samples, horizon, capture_radius,
                 sample_dt=2e-3, tol=1e-10, lip_margin=0.05,
                 strict_density=True, workers=None):
        self.model = model
        self.horizon = float(horizon)
        self.capture_radius = float(capture_radius)
        self.sample_dt = float(sample_dt)
        self.lip_margin = float(lip_margin)
        self.samples = list(samples)
        n = model.n

        def _trace(sample):
            if not sample.ok:
                return None
            return flow(model, PhasePoint(sample.x, sample.p0), self.horizon,
                        tol=tol)

        with ThreadPoolExecutor(max_workers=_worker_count(workers)) as pool:
            self.trajectories = list(pool.map(_trace, self.samples))

        pts, act, pnm, vel, tms, ridx = [], [], [], [], [], []
        for i, traj in enumerate(self.trajectories):
            if traj is None:
                continue
            t_hi = min(self.horizon, traj.t_end)
            grid = np.arange(0.0, t_hi + 0.5 * self.sample_dt, self.sample_dt)
            grid[-1] = min(grid[-1], t_hi)
            states = traj.dense.eval(grid)
            X = states[:, :n]
            P = states[:, n:2 * n]
            A = states[:, 2 * n]
            if model.kernel_params is not None:
                V = conformal.cfactor_batch(model.kernel_params, X)[:, None] * P
            else:
                V = np.array([model.grad_p(X[j], P[j]) for j in range(len(grid))])
            pts.append(X)
            act.append(A)
            pnm.append(np.linalg.norm(P, axis=1))
            nv = np.linalg.norm(V, axis=1)
            nv[nv == 0] = 1.0
            vel.append(V / nv[:, None])
            tms.append(grid)
            ridx.append(np.full(len(grid), i, dtype=int))
        if not pts:
            raise LociLabError("no admissible rays in the field family")
        self.pts = np.concatenate(pts)
        self.act = np.concatenate(act)
        self.pnorm = np.concatenate(pnm)
        self.vel = np.concatenate(vel)
        self.times = np.concatenate(tms)
        self.ray_idx = np.concatenate(ridx)
        self.tree = cKDTree(self.pts)
        self.lip_global = float(np.max(self.pnorm))
        self.density = self._density_check(strict_density)

    def _density_check(self, strict):
        """Adjacent-ray endpoint gaps at the horizon vs the capture radius."""
        ends = []
        for traj in self.trajectories:
            if traj is None or traj.escaped:
                ends.append(None)
            else:
                ends.append(traj.position_at(min(self.horizon, traj.t_end)))
        gaps = []
        widest = (0.0, None)
        for i in range(len(ends) - 1):
            if ends[i] is None or ends[i + 1] is None:
                continue
            g = float(np.linalg.norm(ends[i] - ends[i + 1]))
            gaps.append(g)
            if g > widest[0]:
                widest = (g, i)
        info = {"widest_gap": widest[0], "at_pair": widest[1],
                "escaped_rays": sum(1 for e in ends if e is None),
                "capture_radius": self.capture_radius}
        if strict and gaps and widest[0] >= self.capture_radius:
            raise DensityError(
                f"family too sparse: adjacent endpoint gap {widest[0]:.4g} "
                f"(pair {widest[1]}) >= capture radius "
                f"{self.capture_radius:.4g}", widest_gap=widest[0])
        return info

    def _ball(self, y):
        idx = self.tree.query_ball_point(np.asarray(y, dtype=float),
                                         self.capture_radius)
        idx.sort()
        return np.asarray(idx, dtype=int)

    def query(self, y) -> FieldValue:
        """Minimal stored action within the capture radius of ``y``."""
        idx = self._ball(y)
        if idx.size == 0:
            return FieldValue(None, float("nan"), None, float("nan"),
                              self.lip_global)
        d = np.linalg.norm(self.pts[idx] - np.asarray(y), axis=1)
        lip = (1.0 + self.lip_margin) * float(np.max(self.pnorm[idx]))
        k = int(np.argmin(self.act[idx]))
        best_ray = int(self.ray_idx[idx][k])
        second_value = None
        second_ray = None
        other = self.ray_idx[idx] != best_ray
        if np.any(other):
            k2 = int(np.argmin(self.act[idx][other]))
            second_value = float(self.act[idx][other][k2])
            second_ray = int(self.ray_idx[idx][other][k2])
        return FieldValue(float(self.act[idx][k]), lip * float(d[k]),
                          best_ray, float(d[k]), lip, second_value, second_ray)

    def beats(self, y, along_action, tol, own_ray=None, own_t=None,
              t_sep=None) -> BeatResult:
        """Best certificate that u(y) < along_action - tol among stored
        passes: margin = along - action - lip_local*dist."""
        idx = self._ball(y)
        if idx.size == 0:
            return BeatResult(False)
        d = np.linalg.norm(self.pts[idx] - np.asarray(y), axis=1)
        lip = (1.0 + self.lip_margin) * float(np.max(self.pnorm[idx]))
        margin = along_action - self.act[idx] - lip * d
        if own_ray is not None:
            sep = t_sep if t_sep is not None else 4.0 * self.sample_dt
            same = self.ray_idx[idx] == own_ray
            near = np.abs(self.times[idx] - (own_t or 0.0)) < sep
            margin[same & near] = -float("inf")
        k = int(np.argmax(margin))
        found = bool(margin[k] > tol)
        gidx = idx[k]
        return BeatResult(found, float(margin[k]), int(self.ray_idx[gidx]),
                          float(self.times[gidx]), float(self.act[gidx]),
                          float(d[k]), self.vel[gidx].copy())

    def ray_trajectory(self, ray_id):
        traj = self.trajectories[ray_id]
        if traj is None:
            raise LociLabError(f"ray {ray_id} is not admissible")
        return traj


def build_value_field(model, mesh, horizon, capture_radius, **kw) -> ValueField:
    """Stored-family value function over a source mesh (see ValueField)."""
    return ValueField(model, mesh, horizon, capture_radius, **kw)


# ----------------------------------------------------------------- cut times

@dataclass
class CutResult:
    t: Optional[float]
    competitor: Optional[int] = None
    competitor_velocity: Optional[np.ndarray] = None
    margin: float = float("nan")
    undetermined_beyond: Optional[float] = None
    scanned_to: float = float("nan")


def cut_time(model, sample, field: ValueField, horizon, tol=1e-3,
             scan_dt=0.02, refine_tol=1e-6) -> CutResult:
    """First certified loss of along-ray minimality (see module docstring).

    ``sample`` is a SourceSample of the field's family (or its ray id);
    ``None`` means minimality was never lost up to the scanned horizon; if
    the ray leaves the field's coverage first, ``undetermined_beyond``
    carries the decision horizon.
    """
    ray_id = sample.id if isinstance(sample, SourceSample) else int(sample)
    traj = field.ray_trajectory(ray_id)
    t_hi = min(float(horizon), traj.t_end)

    def probe(t):
        y = traj.position_at(t)
        along = float(traj.action_at(t))
        return field.beats(y, along, tol, own_ray=ray_id, own_t=t)

    grid = np.arange(scan_dt, t_hi + 0.5 * scan_dt, scan_dt)
    if len(grid) == 0:
        return CutResult(None, scanned_to=t_hi)
    grid[-1] = min(grid[-1], t_hi)
    hit_idx = None
    hit = None
    for i, t in enumerate(grid):
        res = probe(t)
        if res.found:
            hit_idx, hit = i, res
            break
    if hit_idx is None:
        und = t_hi if (traj.escaped and t_hi < horizon) else None
        return CutResult(None, undetermined_beyond=und, scanned_to=t_hi)

    lo = grid[hit_idx - 1] if hit_idx > 0 else max(1e-9, grid[0] - scan_dt)
    hi = grid[hit_idx]
    for _ in range(200):
        if hi - lo < refine_tol:
            break
        mid = 0.5 * (lo + hi)
        if probe(mid).found:
            hi = mid
        else:
            lo = mid
    t_cut = 0.5 * (lo + hi)
    final = probe(hi)
    return CutResult(t_cut, competitor=final.ray,
                     competitor_velocity=final.velocity,
                     margin=final.margin, scanned_to=t_hi)


# ------------------------------------------------------------ classification

SIGMA_POINT = "SigmaPoint"
GAMMA_POINT = "GammaPoint"
UNDETERMINED = "Undetermined"


@dataclass
class LociRecord:
    sample_id: int
    parameter: np.ndarray
    t_conj: Optional[float] = None
    t_cut: Optional[float] = None
    classification: str = UNDETERMINED
    gamma_flag: bool = False
    competitor: Optional[int] = None
    conj_residual: float = float("nan")
    cut_margin: float = float("nan")
    clamped: bool = False
    cut_exceedance: float = 0.0
    ordering_violation: bool = False
    error: Optional[str] = None
    diagnostics: dict = field(default_factory=dict)

    def to_row(self):
        par = " ".join(repr(float(v)) for v in np.atleast_1d(self.parameter))
        return {
            "sample_id": int(self.sample_id),
            "parameter": par,
            "t_conj": None if self.t_conj is None else float(self.t_conj),
            "t_cut": None if self.t_cut is None else float(self.t_cut),
            "class": self.classification,
            "gamma_flag": bool(self.gamma_flag),
            "competitor": None if self.competitor is None
            else int(self.competitor),
            "conj_residual": float(self.conj_residual),
            "cut_margin": float(self.cut_margin),
            "ordering_violation": bool(self.ordering_violation),
            "clamped": bool(self.clamped),
            "cut_exceedance": float(self.cut_exceedance),
            "error": self.error,
        }


def classify_cut_point(record: LociRecord, field: ValueField = None,
                       angle_tol=1e-2, time_tol=1e-5, own_velocity=None,
                       competitor_velocity=None) -> LociRecord:
    """Sigma/Gamma/Undetermined per competitor evidence and |t_cut - t_conj|.

    Competitor evidence wins ties: a distinct-velocity competitor at a
    conjugate-coincident cut yields SigmaPoint with the gamma flag set.
    Velocities may be passed explicitly (as the scan does, reusing the
    detection probe) or recovered from the field by probing just past the
    cut along the record's own ray.
    """
    if record.t_cut is None:
        record.classification = UNDETERMINED
        return record
    if (own_velocity is None or competitor_velocity is None) \
            and field is not None:
        traj = field.ray_trajectory(record.sample_id)
        own_velocity = traj.velocity_at(record.t_cut)
        probe_t = min(record.t_cut + 4 * field.sample_dt, traj.t_end)
        beat = field.beats(traj.position_at(probe_t),
                           float(traj.action_at(probe_t)), tol=0.0,
                           own_ray=record.sample_id, own_t=probe_t)
        if beat.ray is not None:
            competitor_velocity = beat.velocity
            record.competitor = beat.ray
    gamma_near = (record.t_conj is not None
                  and abs(record.t_cut - record.t_conj) <= time_tol)
    has_competitor = False
    if competitor_velocity is not None and own_velocity is not None:
        a = np.asarray(own_velocity, dtype=float)
        b = np.asarray(competitor_velocity, dtype=float)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na > 0 and nb > 0:
            cosang = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
            has_competitor = math.acos(cosang) > angle_tol
    if has_competitor:
        record.classification = SIGMA_POINT
        record.gamma_flag = gamma_near
    elif gamma_near:
        record.classification = GAMMA_POINT
    else:
        record.classification = UNDETERMINED
    return record


# ----------------------------------------------------------------- the scan

@dataclass
class LociTable:
    records: list
    meta: dict = field(default_factory=dict)

    @property
    def ordering_violations(self):
        return [r for r in self.records if r.ordering_violation]

    def column(self, name):
        return [getattr(r, name) for r in self.records]


def scan_loci(model, mesh, horizon, field: ValueField = None,
              scan_ids=None, refine_tol=1e-6, flow_tol=1e-10, cut_tol=1e-3,
              angle_tol=1e-2, time_tol=None, ordering_guard=None,
              conj_only=False, workers=None) -> LociTable:
    """Per-sample conjugate time, cut time, classification over a mesh.

    ``mesh`` must be the field's sample list when a field is given (scan
    rays are field rays); ``scan_ids`` selects the subset to scan.
    Deterministic: records are ordered by sample id regardless of workers.
    """
    if time_tol is None:
        time_tol = 10.0 * refine_tol
    if ordering_guard is None:
        ordering_guard = max(time_tol, 5.0 * cut_tol)
    ids = list(scan_ids) if scan_ids is not None else list(range(len(mesh)))

    def one(sid):
        sample = mesh[sid]
        rec = LociRecord(sample_id=sid, parameter=sample.parameter)
        if not sample.ok:
            rec.error = sample.error
            return rec
        try:
            traj = field.ray_trajectory(sid) if field is not None else None
            conj = conjugate_time(model, sample, horizon,
                                  refine_tol=refine_tol, tol=flow_tol,
                                  traj=traj)
            rec.t_conj = conj.t
            rec.conj_residual = conj.residual_ratio
            rec.diagnostics["conj_method"] = conj.method
            rec.diagnostics["min_ratio"] = conj.min_ratio_seen
            if conj_only or field is None:
                return rec
            cut = cut_time(model, sid, field, horizon, tol=cut_tol,
                           refine_tol=refine_tol)
            t_cut = cut.t
            if t_cut is not None and rec.t_conj is not None \
                    and t_cut > rec.t_conj:
                rec.cut_exceedance = t_cut - rec.t_conj
                rec.clamped = True
                rec.ordering_violation = rec.cut_exceedance > ordering_guard
                t_cut = rec.t_conj
            rec.t_cut = t_cut
            rec.cut_margin = cut.margin
            rec.competitor = cut.competitor
            if cut.undetermined_beyond is not None:
                rec.diagnostics["undetermined_beyond"] = cut.undetermined_beyond
            if t_cut is not None:
                own_vel = field.ray_trajectory(sid).velocity_at(t_cut)
                classify_cut_point(rec, angle_tol=angle_tol,
                                   time_tol=time_tol, own_velocity=own_vel,
                                   competitor_velocity=cut.competitor_velocity)
        except Exception as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
        return rec

    with ThreadPoolExecutor(max_workers=_worker_count(workers)) as pool:
        records = list(pool.map(one, ids))
    return LociTable(records=records,
                     meta={"horizon": horizon, "time_tol": time_tol,
                           "angle_tol": angle_tol, "cut_tol": cut_tol,
                           "ordering_guard": ordering_guard,
                           "refine_tol": refine_tol})

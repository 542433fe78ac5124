"""Linearized Hamiltonian flow, Lagrangian frames, and K-matrix extraction.

Tangent vectors are stacked columns (h, v) of length 2n.  The linearized
system along a characteristic is

    h' = B^T h + Q v,      v' = -A h - B v,

with (A, B, Q) the second-derivative blocks evaluated on the trajectory's
dense output.  Frames are re-orthonormalized (QR on the 2n x k stack) when
column conditioning degrades; K extraction is invariant under these column
operations and the accumulated transforms allow exact recovery of the raw
(untransformed) solution for Jacobian cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _engine
from .errors import FrameError
from .models import Trajectory, coeff_matrices
from .stepper import DenseSolution, integrate

_STATUS_NAME = {0: "reached", 1: "escaped", 2: "max_steps"}


def symplectic_form(a, b) -> float:
    """Canonical symplectic form sigma((h1,v1),(h2,v2)) = <h1,v2> - <v1,h2>."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size % 2:
        raise ValueError("arguments must be equal-length even-dim vectors")
    n = a.size // 2
    return float(a[:n] @ b[n:] - a[n:] @ b[:n])


def isotropy_residual(cols: np.ndarray, normalized=True) -> float:
    """max |sigma(c_i, c_j)| over column pairs (columns unit-scaled first
    when ``normalized``, making the residual invariant under frame growth)."""
    cols = np.asarray(cols, dtype=float)
    n = cols.shape[0] // 2
    work = cols.copy()
    if normalized:
        norms = np.linalg.norm(work, axis=0)
        norms[norms == 0] = 1.0
        work = work / norms
    gram = work[:n].T @ work[n:]
    return float(np.max(np.abs(gram - gram.T))) if cols.shape[1] > 1 else 0.0


@dataclass
class LagrangianFrame:
    """Column span of an isotropic subspace: blocks (Hblock over Vblock)."""

    columns: np.ndarray
    isotropy: float

    @classmethod
    def certify(cls, cols, tol=1e-8):
        cols = np.asarray(cols, dtype=float)
        k = cols.shape[1]
        rank = int(np.linalg.matrix_rank(cols, tol=1e-10 * max(1.0, float(np.linalg.norm(cols)))))
        if rank < k:
            raise FrameError(f"frame is rank-deficient ({rank} < {k})")
        resid = isotropy_residual(cols)
        if resid > tol:
            raise FrameError(f"isotropy residual {resid:.3e} exceeds {tol:.1e}")
        return cls(columns=cols, isotropy=resid)

    @property
    def n(self):
        return self.columns.shape[0] // 2

    @property
    def hblock(self):
        return self.columns[:self.n]

    @property
    def vblock(self):
        return self.columns[self.n:]


def vertical_frame(n) -> LagrangianFrame:
    """The vertical subspace {0} x R^n (point-source initial frame)."""
    cols = np.vstack([np.zeros((n, n)), np.eye(n)])
    return LagrangianFrame(columns=cols, isotropy=0.0)


def horizontal_frame(n) -> LagrangianFrame:
    return LagrangianFrame(np.vstack([np.eye(n), np.zeros((n, n))]), 0.0)


@dataclass
class KExtraction:
    """K with J = {(h, K h)}, or the vertical-degenerate flag."""

    K: Optional[np.ndarray]
    degenerate: bool
    smin: float
    asym_residual: float
    svd_tol: float


def extract_K(frame, svd_tol=None) -> KExtraction:
    """K = Vblock Hblock^-1 (symmetrized) when the frame is transversal to
    the vertical; degeneracy is a value, not an error."""
    cols = frame.columns if isinstance(frame, LagrangianFrame) else np.asarray(frame)
    n = cols.shape[0] // 2
    H = cols[:n]
    V = cols[n:]
    scale = float(np.linalg.norm(cols, 2))
    tol = svd_tol if svd_tol is not None else 1e-9 * max(scale, 1e-300)
    smin = float(np.linalg.svd(H, compute_uv=False)[-1]) if min(H.shape) else 0.0
    if smin <= tol:
        return KExtraction(None, True, smin, float("nan"), tol)
    K = np.linalg.solve(H.T, V.T).T
    asym = float(np.max(np.abs(K - K.T)))
    return KExtraction(0.5 * (K + K.T), False, smin, asym, tol)


class FrameTrajectory:
    """Dense frame propagation with the renormalization transform log.

    ``frame_at(t)`` returns the stored (possibly column-renormalized) frame;
    ``frame_at(t, raw=True)`` multiplies back the accumulated upper-
    triangular transforms, recovering the untransformed linearized solution.
    """

    def __init__(self, base: Trajectory, dense: DenseSolution, n, k,
                 tf_times, tf_mats):
        self.base = base
        self.dense = dense
        self.n = n
        self.k = k
        self.tf_times = np.asarray(tf_times, dtype=float)
        self.tf_mats = np.asarray(tf_mats, dtype=float)
        self.status = dense.status

    @property
    def times(self):
        return self.dense.ts

    @property
    def t_end(self):
        return self.dense.t_end

    def _transform_at(self, t):
        if len(self.tf_times) == 0:
            return None
        d = self.dense.direction
        idx = int(np.searchsorted(self.tf_times * d, t * d + 1e-15))
        return self.tf_mats[idx - 1] if idx > 0 else None

    def frame_at(self, t, raw=False):
        Y = self.dense.eval(t).reshape(2 * self.n, self.k)
        if raw:
            T = self._transform_at(t)
            if T is not None:
                Y = Y @ T
        return Y

    def hblock_at(self, t, raw=False):
        return self.frame_at(t, raw=raw)[:self.n]

    def hblocks_at(self, ts):
        """Batched stored Hblocks over an array of times: (len(ts), n, k)."""
        ev = self.dense.eval(np.asarray(ts, dtype=float))
        return ev.reshape(len(ts), 2 * self.n, self.k)[:, :self.n, :]

    def smin_ratio_at(self, t):
        """sigma_min/sigma_max of Hblock: scale-free singularity monitor."""
        sv = np.linalg.svd(self.hblock_at(t), compute_uv=False)
        return float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0

    def det_h_at(self, t):
        return float(np.linalg.det(self.hblock_at(t)))

    def K_at(self, t, svd_tol=None) -> KExtraction:
        return extract_K(self.frame_at(t), svd_tol=svd_tol)

    def isotropy_at(self, t):
        return isotropy_residual(self.frame_at(t))


def propagate_tangents(model, traj: Trajectory, Y0, t0=0.0, t1=None,
                       tol=1e-10, renorm=True,
                       renorm_ratio=1e7) -> FrameTrajectory:
    """Propagate a 2n x k stack of tangent vectors along ``traj``.

    Columns need not form an isotropic frame (pairs of independent
    solutions are propagated the same way for symplectic-form checks).
    """
    Y0 = np.asarray(Y0, dtype=float)
    n = model.n
    k = Y0.shape[1]
    if t1 is None:
        t1 = traj.t_end
    if not (traj.dense.covers(t0) and traj.dense.covers(t1)):
        raise FrameError("frame propagation interval not covered by the "
                         f"trajectory (have up to t={traj.t_end:g})")
    ratio = renorm_ratio if renorm else 0.0
    flat0 = Y0.ravel()
    rtol = tol
    atol = tol * 1e-3
    if model.kernel_params is not None:
        b = traj.dense
        ts, ys, coef, status, nfev, tf_t, tf_m = _engine.integrate_frame(
            model.kernel_params, b.ts, b.ys, b.coef, b.direction,
            flat0, float(t0), float(t1), rtol, atol, 200_000, ratio)
        dense = DenseSolution(ts, ys, coef, _STATUS_NAME[status], nfev,
                              1.0 if t1 >= t0 else -1.0)
        return FrameTrajectory(traj, dense, n, k, tf_t, tf_m)

    def rhs(t, flat):
        s = traj.dense.eval(t)
        A, B, Q = coeff_matrices(model, traj.state_at(t))
        Y = flat.reshape(2 * n, k)
        dH = B.T @ Y[:n] + Q @ Y[n:]
        dV = -A @ Y[:n] - B @ Y[n:]
        return np.concatenate([dH, dV]).ravel()

    tf_times: list = []
    tf_mats: list = []
    cum = np.eye(k)

    def renorm_cb(t, flat):
        nonlocal cum
        Y = flat.reshape(2 * n, k)
        norms = np.linalg.norm(Y, axis=0)
        lo, hi = float(np.min(norms)), float(np.max(norms))
        if lo <= 0.0 or hi / lo > ratio or hi > 1e12:
            Q_, R = np.linalg.qr(Y)
            sign = np.sign(np.diag(R))
            sign[sign == 0] = 1.0
            Q_ = Q_ * sign
            R = sign[:, None] * R
            cum = R @ cum
            tf_times.append(t)
            tf_mats.append(cum.copy())
            return Q_.ravel()
        return None

    dense = integrate(rhs, float(t0), flat0, float(t1), rtol=rtol, atol=atol,
                      escape_norm=1e300,
                      step_callback=renorm_cb if ratio > 0 else None)
    tf_m = np.asarray(tf_mats) if tf_mats else np.empty((0, k, k))
    return FrameTrajectory(traj, dense, n, k, np.asarray(tf_times), tf_m)


def linearized_flow(model, traj: Trajectory, frame0: LagrangianFrame,
                    tol=1e-10, t1=None, renorm=True) -> FrameTrajectory:
    """Propagate an isotropic frame along the characteristic."""
    if isotropy_residual(frame0.columns) > 1e-6:
        raise FrameError("initial frame is not isotropic")
    return propagate_tangents(model, traj, frame0.columns, 0.0, t1, tol,
                              renorm=renorm)


def frame_trace_rows(ft: FrameTrajectory, ts=None):
    """Debug-trace rows (time, smin_ratio, K entries row-major or empty on
    degeneracy) for CSV export."""
    if ts is None:
        ts = ft.times
    rows = []
    for t in np.asarray(ts, dtype=float):
        ex = ft.K_at(float(t))
        kcols = ([""] * ft.n * ft.n if ex.degenerate
                 else [float(v) for v in ex.K.ravel()])
        rows.append([float(t), ft.smin_ratio_at(float(t))] + kcols)
    return rows


def vertical_arrival_frame(model, traj: Trajectory, t, tol=1e-11) -> LagrangianFrame:
    """Frame at time 0 whose linearized image at time ``t`` is vertical.

    Computed by integrating the linearized system backward from the
    vertical frame at ``t``; its K matrix is the time-t representative of
    the subspace flowing into the vertical.
    """
    n = model.n
    ft = propagate_tangents(model, traj, vertical_frame(n).columns,
                            t0=float(t), t1=0.0, tol=tol)
    if ft.status != "reached":
        raise FrameError(f"backward frame integration failed: {ft.status}")
    cols = ft.frame_at(0.0)
    return LagrangianFrame(columns=cols, isotropy=isotropy_residual(cols))

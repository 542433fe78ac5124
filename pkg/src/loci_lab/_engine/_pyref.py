"""Reference (pure Python) engine kernels for the conformal model family.

Mirrors the entry points of the compiled ``_core`` extension by delegating
to the generic stepper with NumPy right-hand sides.  Status codes:
0 = reached, 1 = escaped, 2 = max_steps.
"""

from __future__ import annotations

import numpy as np

from .. import conformal
from ..stepper import (STATUS_ESCAPED, STATUS_MAX_STEPS, STATUS_REACHED,
                       DenseSolution, integrate)

_STATUS_CODE = {STATUS_REACHED: 0, STATUS_ESCAPED: 1, STATUS_MAX_STEPS: 2}


def _pack(sol: DenseSolution):
    return sol.ts, sol.ys, sol.coef, _STATUS_CODE[sol.status], sol.nfev


def integrate_flow(params, level, y0, t0, t1, rtol, atol,
                   max_step=np.inf, max_steps=200_000, escape_norm=1e8):
    rhs = conformal.flow_rhs(np.asarray(params), level)
    sol = integrate(rhs, t0, np.asarray(y0, dtype=float), t1, rtol=rtol,
                    atol=atol, max_step=max_step, max_steps=max_steps,
                    escape_norm=escape_norm)
    return _pack(sol)


def integrate_frame(params, base_ts, base_ys, base_coef, base_dir,
                    y0, t0, t1, rtol, atol, max_steps=200_000,
                    renorm_ratio=1e7):
    params = np.asarray(params)
    n = conformal.unpack_header(params)[1]
    y0 = np.asarray(y0, dtype=float)
    k = y0.size // (2 * n)
    base = DenseSolution(np.asarray(base_ts), np.asarray(base_ys),
                         np.asarray(base_coef), STATUS_REACHED,
                         direction=base_dir)
    rhs = conformal.frame_rhs(params, base.eval)

    tf_times = []
    tf_mats = []
    cum = np.eye(k)

    def renorm(t, flat):
        nonlocal cum
        Y = flat.reshape(2 * n, k)
        norms = np.linalg.norm(Y, axis=0)
        lo = float(np.min(norms))
        hi = float(np.max(norms))
        if lo <= 0.0 or hi / lo > renorm_ratio or hi > 1e12:
            Q, R = np.linalg.qr(Y)
            sign = np.sign(np.diag(R))
            sign[sign == 0] = 1.0
            Q = Q * sign
            R = sign[:, None] * R
            cum = R @ cum
            tf_times.append(t)
            tf_mats.append(cum.copy())
            return Q.ravel()
        return None

    sol = integrate(rhs, t0, y0, t1, rtol=rtol, atol=atol,
                    max_steps=max_steps, escape_norm=1e300,
                    step_callback=renorm if renorm_ratio > 0 else None)
    ts, ys, coef, status, nfev = _pack(sol)
    tf_t = np.asarray(tf_times, dtype=float)
    tf_m = (np.asarray(tf_mats, dtype=float) if tf_mats
            else np.empty((0, k, k)))
    return ts, ys, coef, status, nfev, tf_t, tf_m

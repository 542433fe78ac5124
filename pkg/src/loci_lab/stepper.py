"""Adaptive Dormand-Prince 5(4) integration with dense output.

This is the reference (pure NumPy) stepper.  The compiled engine in
``loci_lab._engine._core`` implements the same scheme with identical
coefficients and step control, so both backends produce interchangeable
:class:`DenseSolution` objects.  Integration direction follows the sign of
``t1 - t0``; blow-ups truncate the solution instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Dormand-Prince 5(4) tableau with the quartic dense-output interpolant.
DP_C = np.array([0.0, 0.2, 0.3, 0.8, 0.8888888888888888, 1.0])
DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0],
    [0.075, 0.225, 0.0, 0.0, 0.0],
    [0.9777777777777777, -3.7333333333333334, 3.5555555555555554, 0.0, 0.0],
    [2.9525986892242035, -11.595793324188385, 9.822892851699436,
     -0.2908093278463649, 0.0],
    [2.8462752525252526, -10.757575757575758, 8.906422717743473,
     0.2784090909090909, -0.2735313036020583],
])
DP_B = np.array([0.09114583333333333, 0.0, 0.44923629829290207,
                 0.6510416666666666, -0.322376179245283, 0.13095238095238096])
DP_E = np.array([-0.0012326388888888888, 0.0, 0.0042527702905061394,
                 -0.03697916666666667, 0.05086379716981132,
                 -0.0419047619047619, 0.025])
DP_P = np.array([
    [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 4.023133379230305, -6.249321565289, 2.675424484351598],
    [0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504],
    [0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912],
    [0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455],
    [0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXPONENT = -0.2

STATUS_REACHED = "reached"
STATUS_ESCAPED = "escaped"
STATUS_MAX_STEPS = "max_steps"


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


@dataclass
class DenseSolution:
    """Piecewise-quartic interpolant of an adaptive integration.

    ``ys[i]`` is the state at knot ``ts[i]``; on step ``i`` the state at
    ``t = ts[i] + th*(ts[i+1]-ts[i])`` is ``ys[i] + coef[i] @ [th, th^2,
    th^3, th^4]``.  Knots are monotone in the integration direction.
    """

    ts: np.ndarray
    ys: np.ndarray
    coef: np.ndarray
    status: str
    nfev: int = 0
    direction: float = 1.0
    _ts_dir: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._ts_dir = self.ts * self.direction

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def t_end(self) -> float:
        return float(self.ts[-1])

    @property
    def nsteps(self) -> int:
        return len(self.ts) - 1

    def covers(self, t: float) -> bool:
        td = t * self.direction
        return self._ts_dir[0] - 1e-12 <= td <= self._ts_dir[-1] + 1e-12

    def eval(self, t):
        """Interpolated state at scalar or array ``t`` (clamped to range)."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if self.nsteps == 0:
            out = np.repeat(self.ys[:1], len(t_arr), axis=0)
        else:
            td = t_arr * self.direction
            idx = np.clip(np.searchsorted(self._ts_dir, td, side="right") - 1,
                          0, self.nsteps - 1)
            h = self.ts[idx + 1] - self.ts[idx]
            th = np.clip((t_arr - self.ts[idx]) / h, 0.0, 1.0)
            powers = np.stack([th, th**2, th**3, th**4], axis=-1)
            out = self.ys[idx] + np.einsum("idj,ij->id", self.coef[idx], powers)
        if np.isscalar(t) or np.asarray(t).ndim == 0:
            return out[0]
        return out


def _initial_step(f, t0, y0, f0, direction, rtol, atol, max_step):
    scale = atol + rtol * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


def integrate(f, t0, y0, t1, rtol=1e-9, atol=1e-12, max_step=np.inf,
              max_steps=200_000, escape_norm=1e8,
              step_callback=None) -> DenseSolution:
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t1`` with dense output.

    ``step_callback(t, y) -> y_or_None`` runs after each accepted step and
    may replace the state (used for frame re-orthonormalization); returning
    an array starts the next step from it.
    """
    y0 = np.asarray(y0, dtype=float)
    d = y0.size
    if t1 == t0:
        return DenseSolution(np.array([t0]), y0[None, :].copy(),
                             np.empty((0, d, 4)), STATUS_REACHED, 0, 1.0)
    direction = 1.0 if t1 > t0 else -1.0

    ts = [t0]
    ys = [y0.copy()]
    coefs = []
    nfev = 0

    t = t0
    y = y0.copy()
    f_curr = np.asarray(f(t, y), dtype=float)
    nfev += 1
    if not np.all(np.isfinite(f_curr)):
        return DenseSolution(np.array(ts), np.array(ys),
                             np.empty((0, d, 4)), STATUS_ESCAPED, nfev, direction)
    h_abs = _initial_step(f, t, y, f_curr, direction, rtol, atol, max_step)
    nfev += 1

    status = STATUS_MAX_STEPS
    K = np.empty((7, d))
    for _ in range(max_steps):
        if direction * (t - t1) >= 0:
            status = STATUS_REACHED
            break
        h_abs = min(h_abs, abs(t1 - t))
        min_h = 16 * np.finfo(float).eps * max(1.0, abs(t))
        step_ok = False
        while True:
            if h_abs < min_h:
                status = STATUS_ESCAPED
                break
            h = h_abs * direction
            K[0] = f_curr
            bad = False
            for s in range(1, 6):
                dy = h * (K[:s].T @ DP_A[s, :s])
                K[s] = f(t + DP_C[s] * h, y + dy)
                nfev += 1
                if not np.all(np.isfinite(K[s])):
                    bad = True
                    break
            if not bad:
                y_new = y + h * (K[:6].T @ DP_B)
                K[6] = f(t + h, y_new)
                nfev += 1
                bad = (not np.all(np.isfinite(K[6]))
                       or not np.all(np.isfinite(y_new)))
            if bad:
                h_abs *= 0.25
                continue
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(h * (K.T @ DP_E) / scale)
            if err <= 1.0:
                factor = (MAX_FACTOR if err == 0.0
                          else min(MAX_FACTOR, SAFETY * err ** ERR_EXPONENT))
                step_ok = True
                break
            h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXPONENT)
        if not step_ok:
            break

        coefs.append(h * (K.T @ DP_P))
        t = t + h
        y = y_new
        f_curr = K[6].copy()
        ts.append(t)
        ys.append(y.copy())
        if float(np.max(np.abs(y))) > escape_norm:
            status = STATUS_ESCAPED
            break
        if step_callback is not None:
            replaced = step_callback(t, y)
            if replaced is not None:
                y = np.asarray(replaced, dtype=float)
                ys[-1] = y.copy()
                f_curr = np.asarray(f(t, y), dtype=float)
                nfev += 1
        h_abs = min(h_abs * factor, max_step)

    return DenseSolution(np.array(ts), np.array(ys),
                         np.array(coefs) if coefs else np.empty((0, d, 4)),
                         status, nfev, direction)

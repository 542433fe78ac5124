"""Hamiltonian models, the characteristic flow, Legendre transforms, actions.

A model carries the dimension, the energy level of its characteristics
(0 for Dirichlet problems, 1/2 for the eikonal convention) and evaluators
for H and its first/second derivatives.  The action along characteristics
integrates the effective Lagrangian of ``H - level``:

    a'(t) = <p, H_p> - H + level

which reduces to the plain Legendre integrand in Dirichlet mode and yields
unit-rate actions along unit-speed eikonal geodesics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _engine, conformal
from .errors import EvaluatorError, LegendreError
from .stepper import DenseSolution, integrate

_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)
_STATUS_NAME = {0: "reached", 1: "escaped", 2: "max_steps"}


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, p) of phase space in chart coordinates."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.x.shape != self.p.shape:
            raise ValueError("position and covector dimensions differ")


@dataclass
class HamiltonianModel:
    """Dimension, level set of the characteristics, and H evaluators.

    ``hess_xp(x, p)[i, j]`` is d2H/dx_i dp_j, so the linearized system
    reads h' = hess_xp^T h + hess_pp v, v' = -hess_xx h - hess_xp v.
    """

    n: int
    eval_H: Callable
    grad_x: Callable
    grad_p: Callable
    hess_xx: Callable
    hess_xp: Callable
    hess_pp: Callable
    level: float = 0.0
    meta: dict = field(default_factory=dict)
    kernel_params: Optional[np.ndarray] = None

    @classmethod
    def from_first_order(cls, n, eval_H, grad_x, grad_p, level=0.0, meta=None):
        """Model with second derivatives synthesized by central differences
        of the gradients (step cbrt(eps)*(1+|state|))."""

        def _fd_jac(fun, x, p, wrt):
            base = np.asarray(x if wrt == "x" else p, dtype=float)
            cols = []
            for i in range(n):
                h = _FD_STEP * (1.0 + abs(base[i]))
                hi = base.copy(); hi[i] += h
                lo = base.copy(); lo[i] -= h
                if wrt == "x":
                    fp, fm = fun(hi, p), fun(lo, p)
                else:
                    fp, fm = fun(x, hi), fun(x, lo)
                cols.append((np.asarray(fp) - np.asarray(fm)) / (2 * h))
            return np.stack(cols, axis=1)

        meta = dict(meta or {})
        meta.setdefault("second_derivatives", "finite-difference")
        return cls(
            n=n, eval_H=eval_H, grad_x=grad_x, grad_p=grad_p,
            hess_xx=lambda x, p: _fd_jac(grad_x, x, p, "x"),
            hess_xp=lambda x, p: _fd_jac(grad_p, x, p, "x").T,
            hess_pp=lambda x, p: _fd_jac(grad_p, x, p, "p"),
            level=level, meta=meta)


def conformal_model(kind, n, eps=0.0, bumps=(), level=0.5, name=None):
    """Model H = 0.5*c(y)*|p|^2 for a conformal factor from the built-in
    family; carries packed parameters for the engine kernels."""
    params = conformal.pack_params(kind, n, eps, bumps)

    def eval_H(x, p):
        return conformal.hamiltonian(params, np.asarray(x), np.asarray(p))

    def grad_x(x, p):
        _, gc, _ = conformal.cfactor_grad_hess(params, np.asarray(x))
        return 0.5 * float(np.dot(p, p)) * gc

    def grad_p(x, p):
        return conformal.cfactor(params, np.asarray(x)) * np.asarray(p)

    def hess_xx(x, p):
        _, _, hc = conformal.cfactor_grad_hess(params, np.asarray(x))
        return 0.5 * float(np.dot(p, p)) * hc

    def hess_xp(x, p):
        _, gc, _ = conformal.cfactor_grad_hess(params, np.asarray(x))
        return np.outer(gc, p)

    def hess_pp(x, p):
        return conformal.cfactor(params, np.asarray(x)) * np.eye(n)

    meta = {"name": name or f"conformal-{kind}", "family": "conformal",
            "second_derivatives": "analytic", "smoothness": "C-infinity"}
    return HamiltonianModel(n, eval_H, grad_x, grad_p, hess_xx, hess_xp,
                            hess_pp, level=level, meta=meta,
                            kernel_params=params)


# ------------------------------------------------------------------ catalog

def catalog(name, n=2, **kwargs):
    """Built-in models addressable by name.

    ``euclidean-eikonal``       H = |p|^2/2, level 1/2
    ``sphere-chart``            round-sphere stereographic chart, level 1/2
    ``sphere-chart-perturbed``  conformal perturbation exp(-2*eps*phi) of the
                                round chart; kwargs: eps, bumps
    """
    if name == "euclidean-eikonal":
        return conformal_model(conformal.KIND_EUCLIDEAN, n, name=name)
    if name == "sphere-chart":
        return conformal_model(conformal.KIND_SPHERE, n, name=name)
    if name == "sphere-chart-perturbed":
        from . import sphere
        spec = sphere.PerturbationSpec(
            epsilon=kwargs.get("eps", kwargs.get("epsilon", 0.05)),
            bumps=kwargs.get("bumps") or sphere.default_bumps(n))
        return sphere.perturbed_model(spec, n)
    raise KeyError(f"unknown catalog model {name!r}")


def polynomial_model(config):
    """Model from a coefficient table: {"dimension", "level", "terms":
    [{"coeff": c, "x": [a1..an], "p": [b1..bn]}, ...]}."""
    if isinstance(config, str):
        with open(config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    n = int(config["dimension"])
    level = float(config.get("level", 0.0))
    terms = [(float(t["coeff"]),
              np.asarray(t.get("x", [0] * n), dtype=int),
              np.asarray(t.get("p", [0] * n), dtype=int))
             for t in config["terms"]]

    def _mono(z, a):
        out = 1.0
        for zi, ai in zip(z, a):
            if ai:
                out *= zi ** ai
        return out

    def eval_H(x, p):
        return sum(c * _mono(x, a) * _mono(p, b) for c, a, b in terms)

    def _grad(x, p, wrt):
        g = np.zeros(n)
        for c, a, b in terms:
            e = a if wrt == "x" else b
            for i in range(n):
                if e[i] == 0:
                    continue
                ee = e.copy(); ee[i] -= 1
                if wrt == "x":
                    g[i] += c * e[i] * _mono(x, ee) * _mono(p, b)
                else:
                    g[i] += c * e[i] * _mono(x, a) * _mono(p, ee)
        return g

    def _hess(x, p, w1, w2):
        h = np.zeros((n, n))
        for c, a, b in terms:
            e1 = a if w1 == "x" else b
            e2 = a if w2 == "x" else b
            for i in range(n):
                if e1[i] == 0:
                    continue
                for j in range(n):
                    f1 = e1.copy(); f1[i] -= 1
                    if w1 == w2:
                        if f1[j] == 0:
                            continue
                        f2 = f1.copy(); f2[j] -= 1
                        fac = e1[i] * f1[j]
                        if w1 == "x":
                            h[i, j] += c * fac * _mono(x, f2) * _mono(p, b)
                        else:
                            h[i, j] += c * fac * _mono(x, a) * _mono(p, f2)
                    else:
                        if e2[j] == 0:
                            continue
                        g2 = e2.copy(); g2[j] -= 1
                        fac = e1[i] * e2[j]
                        h[i, j] += c * fac * _mono(x, f1) * _mono(p, g2)
        return h

    meta = {"name": config.get("name", "polynomial"),
            "second_derivatives": "analytic",
            "smoothness": config.get("smoothness", "user-declared")}
    return HamiltonianModel(
        n=n, eval_H=eval_H,
        grad_x=lambda x, p: _grad(x, p, "x"),
        grad_p=lambda x, p: _grad(x, p, "p"),
        hess_xx=lambda x, p: _hess(x, p, "x", "x"),
        hess_xp=lambda x, p: _hess(x, p, "x", "p"),
        hess_pp=lambda x, p: _hess(x, p, "p", "p"),
        level=level, meta=meta)


# --------------------------------------------------------------- trajectory

class Trajectory:
    """Time-sampled characteristic with dense output and cumulative action.

    State layout of the underlying dense solution: [x (n), p (n), action].
    """

    def __init__(self, model, dense: DenseSolution, requested_t_end):
        self.model = model
        self.dense = dense
        self.requested_t_end = float(requested_t_end)
        self.escaped = dense.status != "reached"
        n = model.n
        self._n = n
        grid = np.linspace(dense.t0, dense.t_end, 33) if dense.nsteps else [dense.t0]
        drift = 0.0
        for t in grid:
            s = dense.eval(t)
            h = model.eval_H(s[:n], s[n:2 * n])
            drift = max(drift, abs(h - model.level))
        self.energy_drift = drift

    @property
    def times(self):
        return self.dense.ts

    @property
    def t_end(self):
        return self.dense.t_end

    @property
    def states(self):
        n = self._n
        return [PhasePoint(row[:n], row[n:2 * n]) for row in self.dense.ys]

    @property
    def actions(self):
        return self.dense.ys[:, 2 * self._n]

    def state_at(self, t) -> PhasePoint:
        s = self.dense.eval(t)
        return PhasePoint(s[:self._n], s[self._n:2 * self._n])

    def position_at(self, t):
        return self.dense.eval(t)[..., :self._n]

    def covector_at(self, t):
        return self.dense.eval(t)[..., self._n:2 * self._n]

    def action_at(self, t):
        return self.dense.eval(t)[..., 2 * self._n]

    def velocity_at(self, t):
        s = self.dense.eval(t)
        return self.model.grad_p(s[:self._n], s[self._n:2 * self._n])


def flow(model, start: PhasePoint, t_end, tol=1e-10, max_steps=200_000,
         escape_norm=1e8) -> Trajectory:
    """Integrate the characteristic system to ``t_end`` (may be negative).

    Blow-up truncates the trajectory: ``escaped`` is set and ``t_end``
    reports the last valid time, realizing the maximal existence time.
    """
    n = model.n
    y0 = np.concatenate([start.x, start.p, [0.0]])
    if not np.all(np.isfinite(y0)):
        raise EvaluatorError("non-finite start state")
    rtol = tol
    atol = tol * 1e-3
    if model.kernel_params is not None:
        ts, ys, coef, status, nfev = _engine.integrate_flow(
            model.kernel_params, model.level, y0, 0.0, float(t_end),
            rtol, atol, np.inf, max_steps, escape_norm)
        dense = DenseSolution(ts, ys, coef, _STATUS_NAME[status], nfev,
                              1.0 if t_end >= 0 else -1.0)
    else:
        def rhs(t, s):
            x = s[:n]
            p = s[n:2 * n]
            gp = np.asarray(model.grad_p(x, p), dtype=float)
            gx = np.asarray(model.grad_x(x, p), dtype=float)
            out = np.empty(2 * n + 1)
            out[:n] = gp
            out[n:2 * n] = -gx
            out[2 * n] = float(p @ gp) - model.eval_H(x, p) + model.level
            return out

        dense = integrate(rhs, 0.0, y0, float(t_end), rtol=rtol, atol=atol,
                          max_steps=max_steps, escape_norm=escape_norm)
    return Trajectory(model, dense, t_end)


# --------------------------------------------------------------- operations

class CoeffBlocks(tuple):
    """(A, B, Q) with the symmetrization residuals of A and Q recorded."""

    def __new__(cls, A, B, Q, asym_A, asym_Q):
        obj = super().__new__(cls, (A, B, Q))
        obj.asym_A = asym_A
        obj.asym_Q = asym_Q
        return obj


def coeff_matrices(model, at: PhasePoint) -> CoeffBlocks:
    """Second-derivative blocks (A, B, Q) at a phase point; A and Q are
    symmetrized with the residual recorded."""
    A = np.asarray(model.hess_xx(at.x, at.p), dtype=float)
    B = np.asarray(model.hess_xp(at.x, at.p), dtype=float)
    Q = np.asarray(model.hess_pp(at.x, at.p), dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))
            and np.all(np.isfinite(Q))):
        raise EvaluatorError("non-finite coefficient matrix entries")
    asym_A = float(np.max(np.abs(A - A.T)))
    asym_Q = float(np.max(np.abs(Q - Q.T)))
    return CoeffBlocks(0.5 * (A + A.T), B, 0.5 * (Q + Q.T), asym_A, asym_Q)


def legendre(model, x, v, tol=1e-10, max_iter=60):
    """Legendre transform: maximize <p,v> - H(x,p) by damped Newton on
    grad_p H = v using the positive-definite block Q.  Returns (L, p*)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    p = np.zeros(model.n)
    res = np.asarray(model.grad_p(x, p)) - v
    for _ in range(max_iter):
        nrm = float(np.linalg.norm(res))
        if nrm <= tol:
            L = float(p @ v) - model.eval_H(x, p)
            return L, p
        Q = np.asarray(model.hess_pp(x, p), dtype=float)
        try:
            step = np.linalg.solve(Q, -res)
        except np.linalg.LinAlgError as exc:
            raise LegendreError(f"singular Q in Newton step: {exc}",
                                residual=nrm) from exc
        alpha = 1.0
        for _ in range(40):
            cand = p + alpha * step
            cres = np.asarray(model.grad_p(x, cand)) - v
            if np.all(np.isfinite(cres)) and np.linalg.norm(cres) < nrm:
                p, res = cand, cres
                break
            alpha *= 0.5
        else:
            raise LegendreError("Newton line search stalled", residual=nrm)
    raise LegendreError("Newton did not reach tolerance",
                        residual=float(np.linalg.norm(res)))


def action(model, traj: Trajectory, t=None):
    """Accumulated action of the trajectory at ``t`` (default: endpoint).

    The integrand <p, H_p> - H + level is carried as an extra ODE component,
    so its quadrature error is bounded by the flow tolerance.
    """
    if t is None:
        t = traj.t_end
    return float(traj.action_at(t))


# --------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    entries: list
    notes: list

    @property
    def passed(self):
        return all(e["passed"] for e in self.entries)

    def to_dict(self):
        return {"passed": self.passed, "entries": self.entries,
                "notes": self.notes}


def validate_model(model, samples, grad_check=True) -> ValidationReport:
    """Check the structural hypotheses on a finite sample set.

    Superlinearity is only a finite-sample proxy (required offset C such
    that H >= K|p| - C over the samples, K in {1, 10}); convexity of H in p
    and negativity of the effective H(x, 0) are pointwise.  Evaluator
    failures become report entries, not exceptions.
    """
    pts = [s if isinstance(s, PhasePoint) else PhasePoint(*s) for s in samples]
    if not pts:
        raise ValueError("sample set is empty")
    entries = []
    notes = [
        "(H1) is a finite-sample proxy: superlinearity cannot be certified "
        "from finitely many evaluations; the required offsets C(K) are "
        "reported for K in {1, 10}.",
        "smoothness class is user-declared metadata: "
        f"{model.meta.get('smoothness', 'unspecified')!r}",
    ]

    h1 = {"hypothesis": "H1", "passed": True, "offsets": {}, "failures": []}
    for K in (1.0, 10.0):
        worst = -math.inf
        for i, s in enumerate(pts):
            try:
                val = model.eval_H(s.x, s.p)
                worst = max(worst, K * float(np.linalg.norm(s.p)) - val)
            except Exception as exc:
                h1["failures"].append({"sample": i, "error": repr(exc)})
                h1["passed"] = False
        h1["offsets"][f"K={K:g}"] = worst
    entries.append(h1)

    h2 = {"hypothesis": "H2", "passed": True, "min_eigenvalue": math.inf,
          "max_symmetry_residual": 0.0, "failures": []}
    for i, s in enumerate(pts):
        try:
            Q = np.asarray(model.hess_pp(s.x, s.p), dtype=float)
            resid = float(np.max(np.abs(Q - Q.T)))
            ev = float(np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))))
            h2["max_symmetry_residual"] = max(h2["max_symmetry_residual"], resid)
            h2["min_eigenvalue"] = min(h2["min_eigenvalue"], ev)
            if resid > 1e-10 or ev <= 0.0:
                h2["passed"] = False
                h2["failures"].append({"sample": i, "min_eig": ev,
                                       "sym_residual": resid})
        except Exception as exc:
            h2["passed"] = False
            h2["failures"].append({"sample": i, "error": repr(exc)})
    entries.append(h2)

    h3 = {"hypothesis": "H3", "passed": True, "max_H_at_zero": -math.inf,
          "failures": []}
    for i, s in enumerate(pts):
        try:
            val = float(model.eval_H(s.x, np.zeros(model.n))) - model.level
            h3["max_H_at_zero"] = max(h3["max_H_at_zero"], val)
            if val >= 0.0:
                h3["passed"] = False
                h3["failures"].append({"sample": i, "H_minus_level": val})
        except Exception as exc:
            h3["passed"] = False
            h3["failures"].append({"sample": i, "error": repr(exc)})
    entries.append(h3)

    if grad_check:
        gc = {"hypothesis": "gradient-consistency", "passed": True,
              "max_error": 0.0, "failures": []}
        for i, s in enumerate(pts):
            try:
                err = _gradient_residual(model, s)
                gc["max_error"] = max(gc["max_error"], err["worst"])
                if not err["ok"]:
                    gc["passed"] = False
                    gc["failures"].append({"sample": i, **err})
            except Exception as exc:
                gc["passed"] = False
                gc["failures"].append({"sample": i, "error": repr(exc)})
        entries.append(gc)

    return ValidationReport(entries=entries, notes=notes)


def _gradient_residual(model, s: PhasePoint):
    gx = np.asarray(model.grad_x(s.x, s.p), dtype=float)
    gp = np.asarray(model.grad_p(s.x, s.p), dtype=float)
    worst = 0.0
    ok = True
    for wrt, grad in (("x", gx), ("p", gp)):
        base = s.x if wrt == "x" else s.p
        for i in range(model.n):
            h = _FD_STEP * (1.0 + abs(float(base[i])))
            hi = base.copy(); hi[i] += h
            lo = base.copy(); lo[i] -= h
            if wrt == "x":
                fd = (model.eval_H(hi, s.p) - model.eval_H(lo, s.p)) / (2 * h)
            else:
                fd = (model.eval_H(s.x, hi) - model.eval_H(s.x, lo)) / (2 * h)
            err = abs(fd - grad[i])
            tol = max(1e-6, 1e-4 * abs(fd))
            worst = max(worst, err)
            if err > tol:
                ok = False
    return {"ok": ok, "worst": worst}

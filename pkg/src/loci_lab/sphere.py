"""Round-sphere ground truth in the stereographic chart, plus conformal
perturbations for deformation experiments.

The chart is the projection from the north pole; the pushed-forward metric
is 4/(1+|y|^2)^2 times the Euclidean one, with Hamiltonian
H(y,p) = (1+|y|^2)^2 |p|^2 / 8 on the level 1/2.  Geodesics from the base
point ybar = (-1, 0, ..., 0), their covectors, the hypersurface
S = {y_1 = 0} with covector field P(z), and the matrices K(z,s), U(z) and
their gap are all available in closed form and back every oracle test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conformal
from .conformal import BUMP_COSINE, BUMP_GAUSSIAN
from .errors import LociLabError
from .models import conformal_model
from .stepper import integrate

_POLE_TOL = 1e-12


# -------------------------------------------------------------- chart maps

def project(X):
    """Stereographic projection from the north pole: (x, lam) -> x/(1-lam)."""
    X = np.asarray(X, dtype=float)
    lam = X[-1]
    if abs(1.0 - lam) < _POLE_TOL:
        raise LociLabError("projection undefined at the north pole")
    return X[:-1] / (1.0 - lam)


def unproject(y):
    """Inverse chart: y -> (2y/(1+|y|^2), (|y|^2-1)/(1+|y|^2))."""
    y = np.asarray(y, dtype=float)
    s = float(y @ y)
    return np.concatenate([2.0 * y / (1.0 + s), [(s - 1.0) / (1.0 + s)]])


def chart_maps(direction, value):
    if direction == "project":
        return project(value)
    if direction == "unproject":
        return unproject(value)
    raise ValueError("direction must be 'project' or 'unproject'")


# ------------------------------------------------------------------ models

def round_model(n):
    """Round-sphere chart Hamiltonian with analytic derivatives, level 1/2."""
    if n < 2:
        raise ValueError("dimension must be >= 2")
    return conformal_model(conformal.KIND_SPHERE, n, name="sphere-chart")


def default_bumps(n):
    """Built-in conformal factor field: two gentle Gaussian bumps.

    Amplitudes keep deformations C4-small enough on the working region that
    tangent nonfocal domains of eps <= 0.05 deformations stay strictly
    uniformly convex with comfortable margin.
    """
    c1 = np.zeros(n); c1[:2] = [0.35, -0.2]
    c2 = np.zeros(n); c2[:2] = [-0.55, 0.6]
    return [(BUMP_GAUSSIAN, 0.1, 0.8, c1), (BUMP_GAUSSIAN, -0.08, 1.0, c2)]


def bumps_from_config(cfg_list, n):
    out = []
    for b in cfg_list:
        btype = {"gaussian": BUMP_GAUSSIAN, "cosine": BUMP_COSINE}[b["type"]]
        vec = np.asarray(b.get("center", b.get("wavevector")), dtype=float)
        width = float(b.get("width", b.get("phase", 1.0)))
        out.append((btype, float(b["amplitude"]), width, vec))
    return out


@dataclass
class PerturbationSpec:
    """Conformal deformation g_eps = exp(2*eps*phi) * g_round."""

    epsilon: float
    bumps: list = field(default_factory=list)
    declared_c4_bound: float = 1.0

    def params(self, n):
        return conformal.pack_params(conformal.KIND_PERTURBED, n,
                                     self.epsilon, self.bumps)

    def c4_proxy(self, n, halfwidth=3.0, grid=13, h=0.05):
        """eps times the largest axis-aligned difference quotient of phi up
        to fourth order over the working region: the closeness proxy."""
        params = self.params(n)
        axes = [np.linspace(-halfwidth, halfwidth, grid)] * min(n, 2)
        worst = 0.0
        for pt in np.stack(np.meshgrid(*axes, indexing="ij"),
                           axis=-1).reshape(-1, min(n, 2)):
            y0 = np.zeros(n)
            y0[:pt.size] = pt

            def phi(y):
                return conformal.phi_value(params, y)

            worst = max(worst, abs(phi(y0)))
            for ax in range(n):
                e = np.zeros(n); e[ax] = h
                f = [phi(y0 + k * e) for k in (-2, -1, 0, 1, 2)]
                d1 = (f[3] - f[1]) / (2 * h)
                d2 = (f[3] - 2 * f[2] + f[1]) / h**2
                d3 = (f[4] - 2 * f[3] + 2 * f[1] - f[0]) / (2 * h**3)
                d4 = (f[4] - 4 * f[3] + 6 * f[2] - 4 * f[1] + f[0]) / h**4
                worst = max(worst, abs(d1), abs(d2), abs(d3), abs(d4))
        return abs(self.epsilon) * worst

    def validate(self, n):
        proxy = self.c4_proxy(n)
        if proxy > self.declared_c4_bound:
            raise LociLabError(
                f"perturbation proxy {proxy:.3g} exceeds declared "
                f"C4 bound {self.declared_c4_bound:g}")
        return proxy


def perturbed_model(spec: PerturbationSpec, n=2):
    """H_eps(y,p) = exp(-2*eps*phi(y)) * H_round(y,p), level 1/2."""
    model = conformal_model(conformal.KIND_PERTURBED, n, eps=spec.epsilon,
                            bumps=spec.bumps, name="sphere-chart-perturbed")
    model.meta["epsilon"] = spec.epsilon
    model.meta["perturbation"] = "conformal"
    return model


# ------------------------------------------------- closed-form geodesics

def velocity_for_z(z):
    """V-data (v_1..v_n) of the geodesic whose half-turn point is z in S."""
    z = np.asarray(z, dtype=float)
    s = float(z @ z)
    v = np.empty(z.size)
    v[:-1] = 2.0 * z[1:] / (1.0 + s)
    v[-1] = (s - 1.0) / (1.0 + s)
    return v


def z_for_velocity(v):
    v = np.asarray(v, dtype=float)
    if abs(1.0 - v[-1]) < _POLE_TOL:
        raise LociLabError("velocity maps to the north pole")
    z = np.zeros(v.size)
    z[1:] = v[:-1] / (1.0 - v[-1])
    return z


def boundary_covector_closed_form(z):
    """P(z) = (2/(1+|z|^2), 0, ..., 0) on S = {y_1 = 0}."""
    z = np.asarray(z, dtype=float)
    p = np.zeros(z.size)
    p[0] = 2.0 / (1.0 + float(z @ z))
    return p


def geodesic_closed_form(v, t):
    """Chart geodesic from ybar with V-data ``v`` (|v| = 1): returns
    (theta(t), p(t), z) with z = theta(pi/2)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    den = 1.0 - math.sin(t) * v[-1]
    if abs(den) < _POLE_TOL:
        raise LociLabError("geodesic passes the chart pole at this time")
    theta = np.empty(n)
    theta[0] = -math.cos(t) / den
    theta[1:] = math.sin(t) * v[:-1] / den
    p = np.empty(n)
    p[0] = math.sin(t) - v[-1]
    p[1:] = math.cos(t) * v[:-1]
    return theta, p, z_for_velocity(v)


def geodesic_velocity_closed_form(v, t):
    """d theta / dt of the closed-form chart geodesic."""
    v = np.asarray(v, dtype=float)
    n = v.size
    den = 1.0 - math.sin(t) * v[-1]
    if abs(den) < _POLE_TOL:
        raise LociLabError("geodesic passes the chart pole at this time")
    dden = -math.cos(t) * v[-1]
    num = np.empty(n)
    num[0] = -math.cos(t)
    num[1:] = math.sin(t) * v[:-1]
    dnum = np.empty(n)
    dnum[0] = math.sin(t)
    dnum[1:] = math.cos(t) * v[:-1]
    return (dnum * den - num * dden) / den**2


# -------------------------------------------------- closed-form K, U, gap

def _chart_weight(z):
    z = np.asarray(z, dtype=float)
    return 4.0 / (1.0 + float(z @ z)) ** 2


def closed_form_K(z, s, transverse_sign=-1.0):
    """K(z, s) of the subspace arriving vertical at time s (s in (0, pi)).

    The transverse (cotangent) entries are ``transverse_sign * cot(s)``
    times the chart weight.  The default -1 is the convention consistent
    with the linearized flow and with monotone K(z, .): the ratio of a
    transverse mode vanishing s later is tan(s + pi/2) = -cot(s).  Passing
    +1 evaluates the mirrored convention; ``transverse_sign_report`` tells
    which one a numeric K matches.
    """
    z = np.asarray(z, dtype=float)
    if not 0.0 < s < math.pi:
        raise ValueError("s must lie in (0, pi)")
    n = z.size
    cot = math.cos(s) / math.sin(s)
    M = np.zeros((n, n))
    M[0, 0] = 1.0 / s
    M[0, 1:] = z[1:]
    M[1:, 0] = z[1:]
    M[np.arange(1, n), np.arange(1, n)] = -float(transverse_sign) * cot
    return -_chart_weight(z) * M


def closed_form_U(z):
    """U(z): the graph matrix of D2u over S = {y_1 = 0}."""
    z = np.asarray(z, dtype=float)
    n = z.size
    M = np.zeros((n, n))
    M[0, 1:] = z[1:]
    M[1:, 0] = z[1:]
    return -_chart_weight(z) * M


def closed_form_gap(z, s, transverse_sign=-1.0):
    """(K(z,s), U(z), K - U); the gap is diagonal with entries
    (4/(1+|z|^2)^2) * (-1/s, -cot s, ..., -cot s) in the default
    convention, singular exactly at s = pi/2 either way."""
    K = closed_form_K(z, s, transverse_sign)
    U = closed_form_U(z)
    return K, U, K - U


def transverse_sign_report(z, s, K_num):
    """Which transverse-sign convention a numeric K(z,s) matches.

    Returns (sign, residual_best, residual_other): sign is -1.0 or +1.0 for
    whichever closed form is closest in Frobenius norm.
    """
    K_num = np.asarray(K_num, dtype=float)
    res = {}
    for sign in (-1.0, 1.0):
        Kc = closed_form_K(z, s, sign)
        res[sign] = float(np.linalg.norm(K_num - Kc) / np.linalg.norm(Kc))
    best = -1.0 if res[-1.0] <= res[1.0] else 1.0
    return best, res[best], res[-best]


# -------------------------------------------------------- parallel frames

def _conformal_log_gradient(y):
    """grad f for f = log 2 - log(1+|y|^2) (round conformal factor)."""
    y = np.asarray(y, dtype=float)
    return -2.0 * y / (1.0 + float(y @ y))


def parallel_frame(z, s, tol=1e-12):
    """Parallel basis E_1..E_n along exp(z, .) at time s (s in [0, pi-0.01]).

    E_1(0) = e_1 (1+|z|^2)/2 is the geodesic velocity; transport uses the
    conformal connection of the round chart metric.  Returns (E, theta(s))
    with E the n x n column stack.
    """
    z = np.asarray(z, dtype=float)
    if not 0.0 <= s <= math.pi - 0.01:
        raise ValueError("s must lie in [0, pi - 0.01]")
    n = z.size
    v = velocity_for_z(z)

    def theta_dot(tau):
        return geodesic_velocity_closed_form(v, tau + math.pi / 2)

    def theta_pos(tau):
        return geodesic_closed_form(v, tau + math.pi / 2)[0]

    E0 = np.eye(n)
    E0[0, 0] = 0.5 * (1.0 + float(z @ z))

    def rhs(tau, flat):
        E = flat.reshape(n, n)
        y = theta_pos(tau)
        td = theta_dot(tau)
        gf = _conformal_log_gradient(y)
        df_td = float(gf @ td)
        out = np.empty_like(E)
        for j in range(n):
            col = E[:, j]
            out[:, j] = -(df_td * col + float(gf @ col) * td
                          - float(td @ col) * gf)
        return out.ravel()

    if s == 0.0:
        return E0, theta_pos(0.0)
    sol = integrate(rhs, 0.0, E0.ravel(), float(s), rtol=tol, atol=tol * 1e-2)
    if sol.status != "reached":
        raise LociLabError(f"parallel transport failed: {sol.status}")
    return sol.eval(float(s)).reshape(n, n), theta_pos(float(s))

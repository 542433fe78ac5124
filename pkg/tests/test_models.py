"""Hamiltonian-core: model validation, characteristic flow, coefficient
blocks, Legendre transforms, and actions against independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loci_lab import models, sphere
from loci_lab.models import PhasePoint, action, coeff_matrices, flow, legendre


def free_eikonal():
    return models.catalog("euclidean-eikonal", n=2)


def quadratic_model(P):
    """H = 0.5 <P p, p> as a polynomial coefficient table."""
    n = P.shape[0]
    terms = []
    for i in range(n):
        for j in range(i, n):
            powers = [0] * n
            powers[i] += 1
            powers[j] += 1
            coeff = P[i, j] if i == j else P[i, j] + P[j, i]
            terms.append({"coeff": 0.5 * coeff, "p": powers})
    return models.polynomial_model({"dimension": n, "level": 0.5,
                                    "terms": terms})


def dirichlet_model():
    """H = 0.5|p|^2 + 0.1|x|^2 - 1: satisfies H(x,0) < 0 near the origin."""
    return models.polynomial_model({
        "dimension": 2, "level": 0.0,
        "terms": [{"coeff": 0.5, "p": [2, 0]}, {"coeff": 0.5, "p": [0, 2]},
                  {"coeff": 0.1, "x": [2, 0]}, {"coeff": 0.1, "x": [0, 2]},
                  {"coeff": -1.0}]})


def grid_samples(rng, count=8, box=1.0, pmax=2.0):
    return [PhasePoint(rng.uniform(-box, box, 2), rng.uniform(-pmax, pmax, 2))
            for _ in range(count)]


# ----------------------------------------------------------- validate_model

def test_validate_constant_coefficient_passes(rng):
    report = models.validate_model(free_eikonal(), grid_samples(rng, pmax=10))
    by = {e["hypothesis"]: e for e in report.entries}
    assert by["H2"]["passed"] and by["H2"]["min_eigenvalue"] > 0
    assert by["H3"]["passed"]
    assert by["H3"]["max_H_at_zero"] == pytest.approx(-0.5)
    assert report.passed


def test_validate_sphere_chart_q_at_origin(rng):
    model = sphere.round_model(2)
    report = models.validate_model(model, grid_samples(rng))
    assert report.passed
    _, _, Q = coeff_matrices(model, PhasePoint([0.0, 0.0], [1.0, 0.5]))
    np.testing.assert_allclose(Q, 0.25 * np.eye(2), atol=1e-12)


def test_validate_linear_in_p_fails_h2(rng):
    linear = models.polynomial_model({
        "dimension": 2, "level": 0.0,
        "terms": [{"coeff": 1.0, "p": [1, 0]}, {"coeff": 0.5, "p": [0, 1]},
                  {"coeff": -1.0}]})
    report = models.validate_model(linear, grid_samples(rng))
    by = {e["hypothesis"]: e for e in report.entries}
    assert not by["H2"]["passed"]
    assert by["H2"]["min_eigenvalue"] == pytest.approx(0.0, abs=1e-14)


def test_validate_reports_evaluator_failure_not_abort(rng):
    model = free_eikonal()
    broken = models.HamiltonianModel(
        n=2, eval_H=lambda x, p: 1.0 / 0.0 if abs(x[0]) > 0.5 else model.eval_H(x, p),
        grad_x=model.grad_x, grad_p=model.grad_p, hess_xx=model.hess_xx,
        hess_xp=model.hess_xp, hess_pp=model.hess_pp, level=0.5)
    samples = [PhasePoint([0.9, 0.0], [1.0, 0.0]),
               PhasePoint([0.1, 0.0], [1.0, 0.0])]
    report = models.validate_model(broken, samples, grad_check=False)
    h1 = next(e for e in report.entries if e["hypothesis"] == "H1")
    assert h1["failures"] and not h1["passed"]


# --------------------------------------------------------------------- flow

def test_flow_straight_line():
    traj = flow(free_eikonal(), PhasePoint([0.0, 0.0], [1.0, 0.0]), 1.0,
                tol=1e-10)
    end = traj.state_at(1.0)
    np.testing.assert_allclose(end.x, [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(end.p, [1.0, 0.0], atol=1e-12)


def test_flow_sphere_half_turn_matches_closed_form():
    # start (ybar, (1,0)): the closed-form ray with v = (0,-1)
    traj = flow(sphere.round_model(2), PhasePoint([-1.0, 0.0], [1.0, 0.0]),
                math.pi / 2, tol=1e-11)
    end = traj.state_at(math.pi / 2)
    np.testing.assert_allclose(end.x, [0.0, 0.0], atol=1e-8)
    np.testing.assert_allclose(end.p, [2.0, 0.0], atol=1e-8)


def test_flow_zero_time_is_identity():
    traj = flow(dirichlet_model(), PhasePoint([0.3, -0.2], [0.5, 0.1]), 0.0)
    assert traj.times.tolist() == [0.0]
    assert action(dirichlet_model(), traj) == 0.0


def test_flow_escape_reports_last_valid_time():
    # H = 0.5 p^2 + x^2 p^2 has super-linear characteristic growth:
    # use an aggressive escape_norm to force truncation
    traj = flow(sphere.round_model(2), PhasePoint([-1.0, 0.0], [-1.0, 0.0]),
                3.0, tol=1e-9, escape_norm=1e3)
    assert traj.escaped
    assert traj.t_end < 3.0


def test_energy_conservation_along_flow(rng):
    for model in (sphere.round_model(2), dirichlet_model()):
        for _ in range(3):
            x = rng.uniform(-0.8, 0.8, 2)
            p = rng.uniform(0.3, 1.2, 2)
            tol = 1e-10
            traj = flow(model, PhasePoint(x, p), 1.5, tol=tol)
            h0 = model.eval_H(x, p)
            drift = max(abs(model.eval_H(traj.state_at(t).x, traj.state_at(t).p)
                            - h0) for t in np.linspace(0, traj.t_end, 23))
            assert drift <= 10 * tol


def test_flow_group_property():
    model = sphere.round_model(2)
    start = PhasePoint([-1.0, 0.2], [0.9, 0.3])
    tol = 1e-10
    ab = flow(model, start, 1.7, tol=tol).state_at(1.7)
    mid = flow(model, start, 0.8, tol=tol).state_at(0.8)
    two = flow(model, PhasePoint(mid.x, mid.p), 0.9, tol=tol).state_at(0.9)
    assert np.linalg.norm(np.concatenate([ab.x - two.x, ab.p - two.p])) \
        <= 100 * tol


def test_flow_reversibility():
    model = dirichlet_model()
    start = PhasePoint([0.4, -0.1], [0.7, 0.2])
    tol = 1e-10
    fwd = flow(model, start, 1.2, tol=tol).state_at(1.2)
    back = flow(model, PhasePoint(fwd.x, fwd.p), -1.2, tol=tol).state_at(-1.2)
    assert np.linalg.norm(np.concatenate([back.x - start.x,
                                          back.p - start.p])) <= 100 * tol


# ----------------------------------------------------------- coeff_matrices

def fd_blocks(model, at, h=1e-6):
    """Independent finite-difference oracle for (A, B, Q) from gradients."""
    n = model.n

    def jac(fun, base, wrt):
        cols = []
        for i in range(n):
            dd = np.zeros(n)
            dd[i] = h
            if wrt == "x":
                cols.append((np.asarray(fun(base.x + dd, base.p))
                             - np.asarray(fun(base.x - dd, base.p))) / (2 * h))
            else:
                cols.append((np.asarray(fun(base.x, base.p + dd))
                             - np.asarray(fun(base.x, base.p - dd))) / (2 * h))
        return np.stack(cols, axis=1)

    A = jac(model.grad_x, at, "x")
    B = jac(model.grad_p, at, "x").T
    Q = jac(model.grad_p, at, "p")
    return A, B, Q


def test_coeff_matrices_free():
    A, B, Q = coeff_matrices(free_eikonal(), PhasePoint([0.3, 1.0], [2.0, -1.0]))
    np.testing.assert_allclose(A, 0.0, atol=1e-14)
    np.testing.assert_allclose(B, 0.0, atol=1e-14)
    np.testing.assert_allclose(Q, np.eye(2), atol=1e-14)


def test_coeff_matrices_sphere_vs_fd_oracle():
    model = sphere.round_model(2)
    at = PhasePoint([0.0, 0.0], [2.0, 0.0])
    A, B, Q = coeff_matrices(model, at)
    np.testing.assert_allclose(Q, np.eye(2) / 4, atol=1e-12)
    A_fd, B_fd, Q_fd = fd_blocks(model, at)
    np.testing.assert_allclose(A, A_fd, atol=1e-7)
    np.testing.assert_allclose(B, B_fd, atol=1e-7)
    at2 = PhasePoint([0.5, -0.7], [1.1, 0.4])
    A, B, Q = coeff_matrices(model, at2)
    A_fd, B_fd, Q_fd = fd_blocks(model, at2)
    np.testing.assert_allclose(A, A_fd, atol=1e-6)
    np.testing.assert_allclose(B, B_fd, atol=1e-6)
    np.testing.assert_allclose(Q, Q_fd, atol=1e-6)


def test_coeff_matrices_constant_spd():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    A, B, Q = coeff_matrices(quadratic_model(P), PhasePoint([0.1, 0.2], [1.0, -1.0]))
    np.testing.assert_allclose(Q, P, atol=1e-12)
    np.testing.assert_allclose(A, 0.0, atol=1e-12)


# ----------------------------------------------------------------- legendre

def brute_force_legendre(model, x, v, radius=6.0, grid=161):
    """Grid maximization oracle for max_p <p,v> - H(x,p) with refinement."""
    best = (-np.inf, None)
    center = np.zeros(model.n)
    for _ in range(3):
        axes = [np.linspace(c - radius, c + radius, grid) for c in center]
        for p0 in np.stack(np.meshgrid(*axes), axis=-1).reshape(-1, model.n):
            val = float(p0 @ v) - model.eval_H(x, p0)
            if val > best[0]:
                best = (val, p0)
        center = best[1]
        radius /= grid / 8
    return best


def test_legendre_free_quadratic():
    L, p = legendre(free_eikonal(), [0.0, 0.0], [3.0, 4.0])
    assert L == pytest.approx(12.5, abs=1e-10)
    np.testing.assert_allclose(p, [3.0, 4.0], atol=1e-10)


def test_legendre_sphere_at_origin_vs_brute_force():
    model = sphere.round_model(2)
    L, p = legendre(model, [0.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(p, [4.0, 0.0], atol=1e-9)
    assert L == pytest.approx(2.0, abs=1e-9)
    L_bf, p_bf = brute_force_legendre(model, np.zeros(2), np.array([1.0, 0.0]))
    assert L == pytest.approx(L_bf, abs=1e-3)
    np.testing.assert_allclose(p, p_bf, atol=5e-2)


def test_legendre_at_zero_velocity_dirichlet():
    model = dirichlet_model()
    x = np.array([0.3, 0.1])
    L, p = legendre(model, x, [0.0, 0.0])
    assert L == pytest.approx(-model.eval_H(x, p), abs=1e-10)
    assert L >= -model.eval_H(x, np.zeros(2)) - 1e-12
    assert L > 0


def test_legendre_involution(rng):
    model = sphere.round_model(2)
    for _ in range(5):
        x = rng.uniform(-0.9, 0.9, 2)
        p = rng.uniform(-1.5, 1.5, 2)
        v = model.grad_p(x, p)
        _, p_back = legendre(model, x, v)
        np.testing.assert_allclose(p_back, p, atol=1e-8)


# ------------------------------------------------------------------- action

def trapezoid_action_oracle(model, traj, t_end, m=4001):
    """Brute-force quadrature of <p,H_p> - H + level along dense output."""
    ts = np.linspace(0.0, t_end, m)
    states = traj.dense.eval(ts)
    n = model.n
    vals = []
    for row in states:
        x, p = row[:n], row[n:2 * n]
        vals.append(float(p @ model.grad_p(x, p)) - model.eval_H(x, p)
                    + model.level)
    return float(np.trapezoid(vals, ts))


def test_action_unit_speed_ray():
    model = free_eikonal()
    traj = flow(model, PhasePoint([0.0, 0.0], [1.0, 0.0]), 2.0, tol=1e-10)
    assert action(model, traj) == pytest.approx(2.0, abs=1e-9)
    assert action(model, traj) == pytest.approx(
        trapezoid_action_oracle(model, traj, 2.0), abs=1e-7)


def test_action_sphere_geodesic_is_arclength():
    model = sphere.round_model(2)
    z = np.array([0.0, 0.4])
    p0 = sphere.boundary_covector_closed_form(z)
    t = 1.3
    traj = flow(model, PhasePoint(z, p0), t, tol=1e-11)
    assert action(model, traj) == pytest.approx(t, abs=1e-8)
    assert action(model, traj) == pytest.approx(
        trapezoid_action_oracle(model, traj, t), abs=1e-6)


def test_actions_nondecreasing_when_integrand_positive():
    model = sphere.round_model(2)
    traj = flow(model, PhasePoint([-1.0, 0.0], [1.0, 0.0]), 2.5, tol=1e-10)
    acts = traj.actions
    assert np.all(np.diff(acts) >= -1e-12)


# ------------------------------------------------------ polynomial models

@settings(max_examples=25, deadline=None)
@given(x=st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
       p=st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_polynomial_gradients_match_fd(x, p):
    model = dirichlet_model()
    at = PhasePoint(np.array(x), np.array(p))
    gx = model.grad_x(at.x, at.p)
    gp = model.grad_p(at.x, at.p)
    h = 1e-6
    for i in range(2):
        dd = np.zeros(2)
        dd[i] = h
        fd_x = (model.eval_H(at.x + dd, at.p) - model.eval_H(at.x - dd, at.p)) / (2 * h)
        fd_p = (model.eval_H(at.x, at.p + dd) - model.eval_H(at.x, at.p - dd)) / (2 * h)
        assert gx[i] == pytest.approx(fd_x, abs=1e-6)
        assert gp[i] == pytest.approx(fd_p, abs=1e-6)


def test_fd_synthesized_hessians_match_analytic():
    ref = sphere.round_model(2)
    fd_model = models.HamiltonianModel.from_first_order(
        2, ref.eval_H, ref.grad_x, ref.grad_p, level=0.5)
    assert fd_model.meta["second_derivatives"] == "finite-difference"
    at = PhasePoint([0.4, -0.3], [1.2, 0.8])
    A1, B1, Q1 = coeff_matrices(ref, at)
    A2, B2, Q2 = coeff_matrices(fd_model, at)
    np.testing.assert_allclose(A1, A2, atol=1e-6)
    np.testing.assert_allclose(B1, B2, atol=1e-6)
    np.testing.assert_allclose(Q1, Q2, atol=1e-6)


def test_legendre_nonconvergence_carries_residual():
    # |H_p| < 1 everywhere, so v = (2, 0) is unreachable
    import math

    def eval_H(x, p):
        return math.sqrt(1.0 + float(np.dot(p, p))) - 2.0

    def grad_p(x, p):
        return np.asarray(p) / math.sqrt(1.0 + float(np.dot(p, p)))

    def hess_pp(x, p):
        q = 1.0 + float(np.dot(p, p))
        return (np.eye(2) - np.outer(p, p) / q) / math.sqrt(q)

    bounded = models.HamiltonianModel(
        n=2, eval_H=eval_H, grad_x=lambda x, p: np.zeros(2), grad_p=grad_p,
        hess_xx=lambda x, p: np.zeros((2, 2)),
        hess_xp=lambda x, p: np.zeros((2, 2)), hess_pp=hess_pp)
    from loci_lab.errors import LegendreError
    with pytest.raises(LegendreError) as exc:
        legendre(bounded, [0.0, 0.0], [2.0, 0.0], max_iter=25)
    assert exc.value.residual is not None and exc.value.residual > 0.5

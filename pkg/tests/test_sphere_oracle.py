"""Round-sphere closed forms: chart maps, geodesics, K/U/gap matrices,
parallel frames, and conformal perturbations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loci_lab import conformal, models, sphere
from loci_lab.models import PhasePoint, flow


def test_project_south_pole_to_origin():
    np.testing.assert_allclose(sphere.project([0.0, 0.0, -1.0]), [0.0, 0.0],
                               atol=1e-15)


def test_project_base_point():
    # Xbar = (ybar, 0) with ybar = (-1, 0, ..., 0) maps to ybar
    np.testing.assert_allclose(sphere.project([-1.0, 0.0, 0.0]), [-1.0, 0.0],
                               atol=1e-15)
    np.testing.assert_allclose(sphere.project([-1.0, 0.0, 0.0, 0.0]),
                               [-1.0, 0.0, 0.0], atol=1e-15)


def test_project_at_pole_errors():
    with pytest.raises(Exception):
        sphere.chart_maps("project", [0.0, 0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=3))
def test_unproject_project_roundtrip(y):
    y = np.array(y)
    X = sphere.unproject(y)
    assert abs(np.linalg.norm(X) - 1.0) < 1e-12
    np.testing.assert_allclose(sphere.project(X), y, atol=1e-12)


def test_round_model_level_and_metric():
    model = sphere.round_model(2)
    assert model.level == 0.5
    # P(0) = (2, 0) lies on the 1/2 level
    assert model.eval_H(np.zeros(2), np.array([2.0, 0.0])) == pytest.approx(0.5)
    # metric at the origin: |v|^2 / c(0) = 4 |v|^2
    c0 = conformal.cfactor(model.kernel_params, np.zeros(2))
    v = np.array([0.3, -0.2])
    assert float(v @ v) / c0 == pytest.approx(4.0 * float(v @ v))


def test_geodesic_closed_form_base_ray():
    v = np.array([0.0, -1.0])  # Vbar
    th0, p0, z = sphere.geodesic_closed_form(v, 0.0)
    np.testing.assert_allclose(th0, [-1.0, 0.0], atol=1e-15)
    th, p, z = sphere.geodesic_closed_form(v, math.pi / 2)
    np.testing.assert_allclose(th, [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p, [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(z, [0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("alpha", [-0.9, -0.3, 0.0, 0.4, 1.1])
def test_half_turn_point_is_tan_half_alpha(alpha):
    v = np.array([math.sin(alpha), -math.cos(alpha)])
    _, _, z = sphere.geodesic_closed_form(v, 0.3)
    assert z[0] == pytest.approx(0.0, abs=1e-15)
    assert z[1] == pytest.approx(math.tan(alpha / 2), abs=1e-12)


def test_velocity_map_identity():
    for v_n in (-1.0, -0.5, 0.2):
        v = np.array([math.sqrt(1 - v_n**2), v_n])
        z = sphere.z_for_velocity(v)
        # 1 + |z|^2 = 2/(1 - v_n) to machine precision
        assert 1.0 + float(z @ z) == pytest.approx(2.0 / (1.0 - v_n),
                                                   rel=1e-14)
        np.testing.assert_allclose(sphere.velocity_for_z(z), v, atol=1e-14)


def test_closed_form_gap_values():
    z = np.zeros(2)
    K, U, gap = sphere.closed_form_gap(z, math.pi / 4)
    np.testing.assert_allclose(U, 0.0, atol=1e-15)
    np.testing.assert_allclose(np.diag(gap), [-16.0 / math.pi, -4.0],
                               atol=1e-12)
    # mirrored transverse convention reproduces diag(-16/pi, 4)
    _, _, gap_m = sphere.closed_form_gap(z, math.pi / 4, transverse_sign=+1)
    np.testing.assert_allclose(np.diag(gap_m), [-16.0 / math.pi, 4.0],
                               atol=1e-12)
    # first conjugate time: transverse entries vanish at s = pi/2
    _, _, gap_c = sphere.closed_form_gap(z, math.pi / 2)
    np.testing.assert_allclose(gap_c[1:, 1:], 0.0, atol=1e-15)
    assert gap_c[0, 0] == pytest.approx(-8.0 / math.pi)


def test_gap_annihilates_transverse_direction_at_half_pi():
    for zv in ([0.7], [0.3, -0.6]):
        z = np.array([0.0] + zv)
        _, _, gap = sphere.closed_form_gap(z, math.pi / 2)
        h = np.zeros(len(z))
        h[1] = 1.0
        assert abs(h @ gap @ h) <= 1e-14


def test_closed_form_domain_errors():
    with pytest.raises(ValueError):
        sphere.closed_form_K(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        sphere.closed_form_K(np.zeros(2), math.pi)


def test_parallel_frame_initial_conditions():
    z = np.array([0.0, 0.5])
    v = sphere.velocity_for_z(z)
    E0, theta0 = sphere.parallel_frame(z, 0.0)
    # E1(0) = e1/(1 - v_n) = e1 (1+|z|^2)/2
    assert 1.0 / (1.0 - v[1]) == pytest.approx(0.5 * 1.25, rel=1e-14)
    np.testing.assert_allclose(E0[:, 0], [0.5 * 1.25, 0.0], atol=1e-12)
    np.testing.assert_allclose(E0[:, 1], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(theta0, z, atol=1e-12)


def test_parallel_frame_derivative_formulas():
    """FD of the transport at s=0 against the displayed derivatives."""
    z = np.array([0.0, 0.5])
    v = sphere.velocity_for_z(z)
    h = 1e-5
    Ep, _ = sphere.parallel_frame(z, h)
    E0, _ = sphere.parallel_frame(z, 0.0)
    dE = (Ep - E0) / h
    v1, vn = v[0], v[1]
    expect_E1 = np.array([0.0, -v1 / (1 - vn) ** 2])
    np.testing.assert_allclose(dE[:, 0], expect_E1, atol=1e-4)
    expect_Ei = np.array([v1 / (1 - vn), 0.0])
    np.testing.assert_allclose(dE[:, 1], expect_Ei, atol=1e-4)


def test_parallel_frame_velocity_column_and_isometry():
    z = np.array([0.0, -0.4])
    v = sphere.velocity_for_z(z)
    for s in (0.3, 1.2, 2.4):
        E, theta = sphere.parallel_frame(z, s)
        vel = sphere.geodesic_velocity_closed_form(v, s + math.pi / 2)
        np.testing.assert_allclose(E[:, 0], vel, atol=1e-8)
        # g-norms constant: g = 4/(1+|y|^2)^2 eucl
        w = 4.0 / (1.0 + float(theta @ theta)) ** 2
        w0 = 4.0 / (1.0 + float(z @ z)) ** 2
        for j in range(2):
            n_s = w * float(E[:, j] @ E[:, j])
            E0, _ = sphere.parallel_frame(z, 0.0)
            n_0 = w0 * float(E0[:, j] @ E0[:, j])
            assert n_s == pytest.approx(n_0, rel=1e-8)


def test_flow_matches_closed_form_along_time():
    model = sphere.round_model(2)
    v = np.array([math.sin(0.35), -math.cos(0.35)])
    p_start = np.array([-v[1], v[0]])
    traj = flow(model, PhasePoint([-1.0, 0.0], p_start), math.pi - 0.1,
                tol=1e-11)
    for t in np.linspace(0.05, math.pi - 0.1, 21):
        th, p, _ = sphere.geodesic_closed_form(v, float(t))
        st_t = traj.state_at(float(t))
        assert np.max(np.abs(st_t.x - th)) <= 1e-8
        assert np.max(np.abs(st_t.p - p)) <= 1e-8


def test_perturbed_eps_zero_identical_to_round():
    round_m = sphere.round_model(2)
    spec = sphere.PerturbationSpec(epsilon=0.0, bumps=sphere.default_bumps(2))
    pert = sphere.perturbed_model(spec, 2)
    for x, p in [([0.2, -0.4], [1.0, 0.3]), ([-1.0, 0.0], [1.0, 0.0])]:
        x, p = np.array(x), np.array(p)
        assert pert.eval_H(x, p) == round_m.eval_H(x, p)
        np.testing.assert_array_equal(pert.grad_x(x, p), round_m.grad_x(x, p))
        np.testing.assert_array_equal(pert.hess_pp(x, p),
                                      round_m.hess_pp(x, p))


def test_perturbed_h2_sweep(rng):
    spec = sphere.PerturbationSpec(epsilon=0.1, bumps=sphere.default_bumps(2))
    model = sphere.perturbed_model(spec, 2)
    samples = [models.PhasePoint(rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2))
               for _ in range(12)]
    report = models.validate_model(model, samples)
    by = {e["hypothesis"]: e for e in report.entries}
    assert by["H2"]["passed"]


def test_c4_proxy_validates_declared_bound():
    spec = sphere.PerturbationSpec(epsilon=0.05, bumps=sphere.default_bumps(2),
                                   declared_c4_bound=1.0)
    proxy = spec.validate(2)
    assert 0.0 < proxy < 1.0

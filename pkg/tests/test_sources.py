"""Source geometry: boundary covectors, initial Lagrangian frames, the
exponential map, and mesh sampling."""

import math

import numpy as np
import pytest

from loci_lab import linearized, models, sources, sphere
from loci_lab.errors import BeyondMaximalTime, SourceError


def test_boundary_covector_flat():
    model = models.catalog("euclidean-eikonal", n=3)
    src = sources.hyperplane_source(3, axis=0, orientation=1)
    p0 = sources.boundary_covector(model, src, [0.2, -0.4])
    np.testing.assert_allclose(p0, [1.0, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("zval", [-1.0, -0.3, 0.0, 0.7, 1.0])
def test_boundary_covector_sphere_matches_formula(zval):
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    p0 = sources.boundary_covector(model, src, [zval])
    expected = np.array([2.0 / (1.0 + zval**2), 0.0])
    np.testing.assert_allclose(p0, expected, atol=1e-12)
    assert abs(model.eval_H(np.array([0.0, zval]), p0) - 0.5) <= 1e-12


def test_boundary_covector_circle_inward():
    model = models.catalog("euclidean-eikonal", n=2)
    src = sources.circle_source(radius=1.0, orientation=-1)
    p0 = sources.boundary_covector(model, src, [0.0])  # chart point (1, 0)
    np.testing.assert_allclose(p0, [-1.0, 0.0], atol=1e-12)


def test_boundary_covector_inadmissible():
    # level 0 with H(x,0) = 0 leaves no room below the level set
    bad = models.polynomial_model({
        "dimension": 2, "level": 0.0,
        "terms": [{"coeff": 0.5, "p": [2, 0]}, {"coeff": 0.5, "p": [0, 2]}]})
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    with pytest.raises(SourceError, match="not admissible"):
        sources.boundary_covector(bad, src, [0.0])


def test_initial_lagrangian_flat_is_horizontal_graph_of_zero():
    model = models.catalog("euclidean-eikonal", n=2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    frame = sources.initial_lagrangian(model, src, [0.3])
    ex = linearized.extract_K(frame)
    assert not ex.degenerate
    np.testing.assert_allclose(ex.K, 0.0, atol=1e-9)


@pytest.mark.parametrize("zval", [-1.0, -0.5, 0.0, 0.5, 1.0])
def test_initial_lagrangian_sphere_matches_oracle(zval):
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    frame = sources.initial_lagrangian(model, src, [zval])
    assert frame.isotropy <= 1e-8
    ex = linearized.extract_K(frame)
    U = sphere.closed_form_U(np.array([0.0, zval]))
    assert np.max(np.abs(ex.K - U)) <= 1e-8


def test_initial_lagrangian_contains_hamiltonian_direction():
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    z = np.array([0.0, 0.4])
    p0 = sources.boundary_covector(model, src, [0.4])
    frame = sources.initial_lagrangian(model, src, [0.4])
    hdir = sources.hamiltonian_direction(model, z, p0)
    # residual of hdir against the column span
    coef, res, *_ = np.linalg.lstsq(frame.columns, hdir, rcond=None)
    recon = frame.columns @ coef
    assert np.linalg.norm(recon - hdir) <= 1e-8 * np.linalg.norm(hdir)


def test_point_source_frame_is_vertical():
    model = sphere.round_model(2)
    src = sources.point_source([-1.0, 0.0])
    frame = sources.initial_lagrangian(model, src, [0.0])
    np.testing.assert_allclose(frame.columns[:2], 0.0)
    np.testing.assert_allclose(frame.columns[2:], np.eye(2))


def test_exp_map_identity_and_flat_translation():
    model = models.catalog("euclidean-eikonal", n=2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    sample = sources.make_sample(model, src, [0.7])
    np.testing.assert_allclose(sources.exp_map(model, sample, 0.0),
                               sample.x, atol=1e-12)
    np.testing.assert_allclose(sources.exp_map(model, sample, 2.0),
                               sample.x + np.array([2.0, 0.0]), atol=1e-9)


def test_exp_map_sphere_chart_pole_continuation():
    # ray from chart origin reaches the chart image of the half-turn point
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    sample = sources.make_sample(model, src, [0.0])
    # oracle: geodesic with v = Z^-1(0) = (0,-1) continued to t = pi
    v = sphere.velocity_for_z(np.zeros(2))
    theta, _, _ = sphere.geodesic_closed_form(v, math.pi)
    pos = sources.exp_map(model, sample, math.pi / 2)
    np.testing.assert_allclose(pos, theta, atol=1e-8)
    np.testing.assert_allclose(pos, [1.0, 0.0], atol=1e-8)


def test_exp_map_beyond_maximal_time():
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    sample = sources.make_sample(model, src, [0.0])
    # the z=0 ray escapes the chart at t -> pi
    with pytest.raises(BeyondMaximalTime):
        sources.exp_map(model, sample, 3.3, tol=1e-9)


def test_source_mesh_1d_grid():
    model = models.catalog("euclidean-eikonal", n=2)
    src = sources.hyperplane_source(2, axis=0, orientation=1,
                                    param_box=[(0.0, 1.0)])
    mesh = sources.source_mesh(model, src, 5)
    np.testing.assert_allclose([s.parameter[0] for s in mesh],
                               [0.0, 0.25, 0.5, 0.75, 1.0])
    assert all(s.ok for s in mesh)


def test_source_mesh_sphere_covectors():
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1,
                                    param_box=[(-1.0, 1.0)])
    mesh = sources.source_mesh(model, src, 3)
    for s, zv in zip(mesh, [-1.0, 0.0, 1.0]):
        np.testing.assert_allclose(s.p0, [2.0 / (1 + zv**2), 0.0], atol=1e-12)
        assert s.diagnostics["H_residual"] <= 1e-10
        assert s.diagnostics["isotropy"] <= 1e-8


def test_source_mesh_point_directions_on_level():
    model = sphere.round_model(2)
    src = sources.point_source([-1.0, 0.0],
                               direction_box=[(-1.0, 1.0)])
    mesh = sources.source_mesh(model, src, 7)
    for s in mesh:
        assert s.ok
        assert abs(model.eval_H(s.x, s.p0) - 0.5) <= 1e-10


def test_transversality_at_source():
    model = sphere.round_model(2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    mesh = sources.source_mesh(model, src, 5)
    for s in mesh:
        assert abs(s.diagnostics["transversal"]) > 1e-6


def test_mesh_resolution_must_be_at_least_two():
    model = models.catalog("euclidean-eikonal", n=2)
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    with pytest.raises(SourceError):
        sources.source_mesh(model, src, 1)


def test_source_mesh_marks_duplicate_positions():
    model = models.catalog("euclidean-eikonal", n=2)
    src = sources.circle_source(radius=1.0, orientation=-1,
                                param_box=[(0.0, 2.0 * math.pi)])
    mesh = sources.source_mesh(model, src, 9)  # endpoints coincide
    assert mesh[0].ok
    assert not mesh[-1].ok and "injective" in mesh[-1].error
    assert all(s.ok for s in mesh[1:-1])


def test_source_mesh_marks_inadmissible_samples():
    bad = models.polynomial_model({
        "dimension": 2, "level": 0.0,
        "terms": [{"coeff": 0.5, "p": [2, 0]}, {"coeff": 0.5, "p": [0, 2]}]})
    src = sources.hyperplane_source(2, axis=0, orientation=1)
    mesh = sources.source_mesh(bad, src, 3)
    assert len(mesh) == 3
    assert all(not s.ok and "not admissible" in s.error for s in mesh)

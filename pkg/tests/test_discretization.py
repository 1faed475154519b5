import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stdamage.discretization import (DIRICHLET, FREE, ModelParams, QuadratureConfig, SpaceTimeField,
                                     SpatialMesh1D, TemporalMesh, assemble_mass, assemble_stiffness,
                                     assemble_weighted_mass, build_spatial_mesh, build_temporal_mesh,
                                     gauss01, jump, jumps, l2_project_space, lift_control,
                                     spatial_load, time_average_load, tridiag_matvec, tridiag_solve,
                                     mass_bands)


def test_temporal_mesh():
    tm = build_temporal_mesh(1.0, 4)
    np.testing.assert_allclose(tm.points, [0, 0.25, 0.5, 0.75, 1.0])
    assert build_temporal_mesh(1.0, 2**9).tau_max == 2.0**-9
    one = build_temporal_mesh(2.0, 1)
    assert one.M == 1 and one.T == 2.0
    for bad in [(1.0, 0), (0.0, 4), (-1.0, 3)]:
        with pytest.raises(ValueError):
            build_temporal_mesh(*bad)
    with pytest.raises(ValueError):
        TemporalMesh(np.array([0.0, 0.5, 0.4]))


def test_spatial_mesh():
    sm = build_spatial_mesh(0.0, 1.0, 8)
    assert sm.nodes.size == 9 and sm.h_max == 0.125
    assert build_spatial_mesh(0, 1, 2**9).h_max == 2.0**-9
    np.testing.assert_allclose(build_spatial_mesh(0, 1, 2).nodes, [0, 0.5, 1])
    for bad in [(0, 1, 1), (1, 1, 4), (1, 0, 4)]:
        with pytest.raises(ValueError):
            build_spatial_mesh(*bad)
    with pytest.raises(ValueError):
        SpatialMesh1D(np.array([0.0, 0.6, 0.5, 1.0]))
    assert sm.ndof(FREE) == 9 and sm.ndof(DIRICHLET) == 7


def test_params_and_quadrature_validation():
    with pytest.raises(ValueError):
        ModelParams(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        QuadratureConfig(q_time=1)
    x, w = gauss01(3)
    assert w.sum() == pytest.approx(1.0)
    assert (x**5 * w).sum() == pytest.approx(1 / 6)


@pytest.mark.parametrize("mode", ["consistent", "lumped"])
def test_mass_partition_of_unity(mode):
    sm = SpatialMesh1D(np.array([0.0, 0.1, 0.35, 0.4, 0.8, 1.3]))
    assert assemble_mass(sm, FREE, mode).sum() == pytest.approx(1.3)


def test_mass_rows_uniform():
    h = 0.125
    sm = build_spatial_mesh(0, 1, 8)
    M = assemble_mass(sm, FREE).toarray()
    np.testing.assert_allclose(M[3, 2:5], [h / 6, 4 * h / 6, h / 6])
    L = assemble_mass(sm, FREE, "lumped").toarray()
    np.testing.assert_allclose(np.diag(L)[[0, 4, 8]], [h / 2, h, h / 2])
    np.testing.assert_allclose(L, np.diag(np.diag(L)))
    assert assemble_mass(sm, DIRICHLET).shape == (7, 7)


def test_stiffness():
    sm = build_spatial_mesh(0, 1, 8)
    K = assemble_stiffness(sm, FREE).toarray()
    np.testing.assert_allclose(K @ np.ones(9), 0.0, atol=1e-12)
    np.testing.assert_allclose(K[4, 3:6], [-8.0, 16.0, -8.0])
    K2 = assemble_stiffness(build_spatial_mesh(0, 1, 2), DIRICHLET).toarray()
    np.testing.assert_allclose(K2, [[4.0]])
    Kd = assemble_stiffness(sm, DIRICHLET).toarray()
    assert np.all(np.linalg.eigvalsh(Kd) > 0)
    np.testing.assert_allclose(Kd, Kd.T)


def test_weighted_mass():
    sm = SpatialMesh1D(np.array([0.0, 0.2, 0.5, 0.55, 1.0]))
    q = 4
    M = assemble_mass(sm, FREE).toarray()
    ones = np.ones((sm.N, q))
    np.testing.assert_allclose(assemble_weighted_mass(sm, FREE, FREE, ones).toarray(), M, atol=1e-15)
    np.testing.assert_allclose(assemble_weighted_mass(sm, FREE, FREE, 0 * ones).toarray(), 0.0)
    np.testing.assert_allclose(assemble_weighted_mass(sm, FREE, FREE, 2.5 * ones).toarray(), 2.5 * M,
                               atol=1e-15)
    mixed = assemble_weighted_mass(sm, DIRICHLET, FREE, ones)
    assert mixed.shape == (3, 5)
    with pytest.raises(ValueError):
        assemble_weighted_mass(sm, FREE, FREE, np.ones((sm.N + 1, q)))


def test_l2_projection():
    sm = build_spatial_mesh(0, 1, 2)
    np.testing.assert_allclose(l2_project_space(lambda x: 0 * x, sm), 0.0)
    # exact integrals of x^2 against the three hats: 1/96, 14/96, 17/96
    b = np.array([1, 14, 17]) / 96
    M = 0.5 / 6 * np.array([[2, 1, 0], [1, 4, 1], [0, 1, 2]])
    np.testing.assert_allclose(l2_project_space(lambda x: x**2, sm), np.linalg.solve(M, b))
    fine = SpatialMesh1D(np.array([0.0, 0.3, 0.45, 0.7, 1.0]))
    vals = np.array([0.0, 1.0, -2.0, 0.5, 0.0])
    f = lambda x: np.interp(x, fine.nodes, vals)
    np.testing.assert_allclose(l2_project_space(f, fine, FREE), vals, atol=1e-13)
    np.testing.assert_allclose(l2_project_space(f, fine, DIRICHLET), vals[1:-1], atol=1e-13)


def test_time_average_load():
    tm, sm = build_temporal_mesh(1.0, 4), build_spatial_mesh(0, 1, 6)
    quad = QuadratureConfig()
    const = time_average_load(lambda t, x: np.sin(x) + 0 * t, 2, tm, sm, DIRICHLET, quad)
    np.testing.assert_allclose(const, spatial_load(np.sin, sm, DIRICHLET, quad))
    lin = time_average_load(lambda t, x: t + 0 * x, 3, tm, sm, FREE, QuadratureConfig(2, 2))
    np.testing.assert_allclose(lin, spatial_load(lambda x: 0.625 + 0 * x, sm, FREE, quad))
    np.testing.assert_allclose(time_average_load(lambda t, x: 0 * t * x, 1, tm, sm), 0.0)
    with pytest.raises(IndexError):
        time_average_load(lambda t, x: t * x, 0, tm, sm)


def test_tridiag_helpers_batch():
    sm = build_spatial_mesh(0, 1, 5)
    d, o = mass_bands(sm, FREE)
    rng = np.random.default_rng(1)
    v = rng.normal(size=(3, 6))
    M = assemble_mass(sm, FREE).toarray()
    np.testing.assert_allclose(tridiag_matvec(d, o, v), v @ M)
    np.testing.assert_allclose(tridiag_solve(d, o, v.T).T @ M, v, atol=1e-12)


def _field(coeffs, kind=FREE, N=None):
    coeffs = np.asarray(coeffs, float)
    M = coeffs.shape[0]
    N = N or (coeffs.shape[1] - 1 if kind == FREE else coeffs.shape[1] + 1)
    return SpaceTimeField(kind, coeffs, build_temporal_mesh(1.0, M), build_spatial_mesh(0, 1, N))


def test_field_basics():
    u = _field(np.arange(6.0).reshape(2, 3), DIRICHLET)
    assert u(0.3, 0.0) == 0.0 and u(0.9, 1.0) == 0.0
    assert u(0.3, 0.5) == 1.0 and u(0.9, 0.5) == 4.0
    assert u(0.5, 0.5) == 1.0  # slabs are left-open, right-closed
    np.testing.assert_allclose((u + u - u * 2).coeffs, 0.0)
    with pytest.raises(ValueError):
        SpaceTimeField(DIRICHLET, np.zeros((2, 3)), u.tmesh, build_spatial_mesh(0, 1, 5))
    with pytest.raises(ValueError):
        u + _field(np.zeros((2, 5)), FREE)


def test_jumps():
    c = _field(np.ones((3, 3)))
    np.testing.assert_allclose(jump(c, 0), 1.0)
    assert all(np.all(jump(c, m) == 0) for m in (1, 2))
    two = _field(np.array([[0.0] * 3, [1.0] * 3]))
    np.testing.assert_allclose(jump(two, 0), 0.0)
    np.testing.assert_allclose(jump(two, 1), 1.0)
    with pytest.raises(IndexError):
        jump(two, 2)
    np.testing.assert_allclose(jumps(_field(np.zeros((4, 3)))), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**31))
def test_jumps_telescope(M, N, seed):
    u = _field(np.random.default_rng(seed).normal(size=(M, N + 1)))
    np.testing.assert_allclose(jumps(u).sum(axis=0), u.coeffs[-1], atol=1e-12)


def test_lift_constant():
    u = _field(2.0 * np.ones((4, 3)))
    lift = lift_control(u)
    np.testing.assert_allclose(lift(0.0), 0.0)
    np.testing.assert_allclose(lift(0.125), 1.0)
    np.testing.assert_allclose(lift(0.6), 2.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_lift_properties(M, seed):
    rng = np.random.default_rng(seed)
    pts = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 1.0, M - 1)), [1.0]]) if M > 1 \
        else np.array([0.0, 1.0])
    pts = np.unique(pts)
    tm = TemporalMesh(pts)
    sm = build_spatial_mesh(0, 1, 4)
    u = SpaceTimeField(FREE, rng.normal(size=(tm.M, 5)), tm, sm)
    lift = lift_control(u)
    Ms = assemble_mass(sm, FREE).toarray()
    jm = jumps(u)
    tau = tm.lengths
    norm_jumps = np.einsum("m,mi,ij,mj->", 1 / tau, jm, Ms, jm)
    # property (i): time derivative is constant per slab
    dt2 = sum(tau[m] * lift.time_derivative(pts[m] + tau[m] / 2) @ Ms
              @ lift.time_derivative(pts[m] + tau[m] / 2) for m in range(tm.M))
    assert dt2 == pytest.approx(norm_jumps, rel=1e-12)
    # property (ii): the lift error is linear per slab, Gauss with 3 points is exact
    xs, ws = gauss01(3)
    err = 0.0
    for m in range(tm.M):
        for s, w in zip(xs, ws):
            e = lift(pts[m] + s * tau[m]) - u.coeffs[m]
            err += tau[m] * w * e @ Ms @ e
    assert err == pytest.approx(np.einsum("m,mi,ij,mj->", tau, jm, Ms, jm) / 3, rel=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgnf.bilinear_psdo import apply, shatah_symbols
from kgnf.errors import StencilError
from kgnf.hypergrid import CoefficientSpec, Field, HyperGrid
from kgnf.quad_nf import (CSV_FIELDS, cubic_correction, n_quad, quad_identity_residual,
                          quad_state, quadratic_source, rho_commutator, rows_to_csv, t1,
                          t1_cancellation_residual, t3)
from kgnf.solver import HyperbolicModel, SolverConfig, evolve, gaussian_data
from kgnf.spectral import dealiased_product, frequencies, linf_norm, random_field

GRID = HyperGrid(6.0, 256)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-3, 3))
def test_symbol_identity_behind_the_cancellation(xi, eta, a0):
    """Plane-wave form of T1: the u u bracket equals alpha0 and the u_dot u_dot bracket is 0."""
    k0, k2 = shatah_symbols(a0)
    uu = 2 * k2(xi, eta) * (1 + xi**2) * (1 + eta**2) + 2 * xi * eta * k0(xi, eta) - k0(xi, eta)
    dd = 2 * xi * eta * k2(xi, eta) + 2 * k0(xi, eta) - k2(xi, eta)
    assert uu == pytest.approx(a0, rel=1e-9, abs=1e-9)
    assert dd == pytest.approx(0.0, abs=1e-9 * (1 + abs(a0)))


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.sampled_from([1.0, 4.0, 16.0]), st.sampled_from([1.0, -0.7]))
def test_t1_collapses_to_the_quadratic_source(seed, rho, a0):
    rng = np.random.default_rng(seed)
    u = random_field(GRID, rho, rng, smoothness=0.05)
    ud = random_field(GRID, rho, rng, smoothness=0.05)
    assert t1_cancellation_residual(u, ud, a0) < 1e-8


def test_t1_on_plane_waves():
    rho = 3.0
    grid = HyperGrid(np.pi, 64)
    y = grid.y_samples
    u = Field(np.cos(4 * y), rho, grid)
    ud = Field(np.sin(3 * y), rho, grid)
    expected = rho**-0.5 * 2.0 * np.cos(4 * y) ** 2
    np.testing.assert_allclose(t1(u, ud, 2.0).values, expected, atol=1e-12)


def test_zero_coupling_gives_zero_pieces():
    rng = np.random.default_rng(0)
    u = random_field(GRID, 2.0, rng)
    assert linf_norm(n_quad(u, u, 0.0)) == 0.0
    assert linf_norm(t1(u, u, 0.0)) == 0.0
    assert t1_cancellation_residual(u, u, 0.0) == 0.0


def test_zero_field_residual_is_zero():
    z = Field.zeros(GRID, 2.0)
    assert t1_cancellation_residual(z, z, 1.0) == 0.0


def test_n_quad_scaling_in_alpha0():
    rng = np.random.default_rng(1)
    u, ud = random_field(GRID, 2.0, rng), random_field(GRID, 2.0, rng)
    np.testing.assert_allclose(n_quad(u, ud, 3.0).values, 3 * n_quad(u, ud, 1.0).values,
                               atol=1e-13)


def test_quadratic_source_and_cubic_correction():
    rng = np.random.default_rng(2)
    u = random_field(GRID, 4.0, rng, band=0.2)
    ud = random_field(GRID, 4.0, rng, band=0.2)
    np.testing.assert_allclose(quadratic_source(u, 2.0).values, u.values**2, atol=1e-12)
    expected = (2 * u.values**3 - 8 / 3 * ud.values**2 * u.values) / 4.0
    np.testing.assert_allclose(cubic_correction(u, ud, 1.0).values, expected, atol=1e-12)


def _families(rho, grid=GRID):
    y = grid.y_samples

    def u_of(r):
        return np.exp(-(1 + 0.1 * r) * y**2) * np.cos(0.5 * r * y)

    def v_of(r):
        return np.exp(-(y - 0.3) ** 2 / (1 + 0.05 * r))

    return u_of, v_of


@pytest.mark.parametrize("which", [0, 1])
def test_rho_commutator_against_differences(which):
    """Commutator of d_rho^2 with rho^-1/2 K from closed-form partials vs a five-point stencil."""
    K = shatah_symbols(1.0)[which]
    rho, h = 2.0, 1e-3
    u_of, v_of = _families(rho)

    def f(fun, r):
        return Field(fun(r), r, GRID)

    def L(r):
        return apply(K, f(u_of, r), f(v_of, r)).values * r**-0.5

    def d(fun, order):
        vals = [fun(rho + j * h) for j in (-2, -1, 0, 1, 2)]
        if order == 1:
            return (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
        return (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * h * h)

    u, v = f(u_of, rho), f(v_of, rho)
    ud, vd = Field(d(u_of, 1), rho, GRID), Field(d(v_of, 1), rho, GRID)
    udd, vdd = Field(d(u_of, 2), rho, GRID), Field(d(v_of, 2), rho, GRID)
    # d_rho^2 L[u, v] minus every term where both derivatives land on the inputs
    inner = apply(K, udd, v) + apply(K, u, vdd) + 2 * apply(K, ud, vd)
    expected = d(L, 2) - rho**-0.5 * inner.values
    np.testing.assert_allclose(rho_commutator(K, u, v, ud, vd).values, expected, atol=2e-5)


def test_t3_requires_second_derivative():
    z = Field.zeros(GRID, 2.0)
    with pytest.raises(StencilError):
        t3(z, z, None, 1.0)


@pytest.fixture(scope="module")
def quadratic_trajectory():
    coeffs = CoefficientSpec(alpha0=1.0)
    init = gaussian_data(GRID, 1.0, amplitude=0.05)
    return evolve(init, 4.0, coeffs, SolverConfig(max_step=0.05))


def test_quad_state_pieces_are_consistent(quadratic_trajectory):
    traj = quadratic_trajectory
    st_ = traj.state(traj.index_near(2.0))
    qs = quad_state(HyperbolicModel(traj.coefficients, traj.grid), st_.u, st_.udot)
    assert qs.identity_residual is None
    diff = qs.r_quad_tilde - qs.r_quad - cubic_correction(st_.u, st_.udot, 1.0)
    assert linf_norm(diff) < 1e-15
    assert linf_norm(qs.t1 - quadratic_source(st_.u, 1.0)) < 1e-8 * linf_norm(qs.t1)


def test_identity_residual_is_second_order_in_the_stencil(quadratic_trajectory):
    steps = (0.1, 0.05, 0.025)
    rows = [quad_identity_residual(quadratic_trajectory, [2.0], h=h)[0] for h in steps]
    res = [r["identity_residual"] for r in rows]
    assert all(r["t1_residual"] < 1e-8 for r in rows)
    # only the centered second difference in rho is left
    assert res[-1] < 5e-3 * rows[-1]["source_scale"]
    for a, b in zip(res, res[1:]):
        assert 3.8 <= a / b <= 4.2


def test_identity_stencil_must_fit(quadratic_trajectory):
    with pytest.raises(StencilError):
        quad_identity_residual(quadratic_trajectory, [1.01], h=0.05)


def test_rows_to_csv_header_and_format(quadratic_trajectory):
    rows = quad_identity_residual(quadratic_trajectory, [2.0, 3.0], h=0.1)
    text = rows_to_csv(rows).splitlines()
    assert text[0].split(",") == CSV_FIELDS
    assert len(text) == 3
    assert float(text[1].split(",")[0]) == 2.0

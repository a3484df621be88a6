import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgnf.bilinear_psdo import (ONE, apply, apply_fast, apply_reference, dyadic_kernel_bound,
                                frozen_rho_derivative, frozen_rho_derivative2, get_symbol,
                                leibniz_drho_residual, leibniz_dy_residual, parse_symbol,
                                shatah_denominator, shatah_symbols)
from kgnf.errors import ConfigError, GridMismatchError, StencilError
from kgnf.hypergrid import Field, HyperGrid
from kgnf.spectral import dealiased_product, frequencies, random_field

GRID = HyperGrid(6.0, 256)
PI_GRID = HyperGrid(math.pi, 128)


def plane_wave(grid, rho, j):
    return Field(np.exp(1j * grid.wavenumbers[j] * grid.y_samples), rho, grid)


# --- symbol catalogue -------------------------------------------------------------------

def test_denominator_values():
    assert shatah_denominator(1.0, -1.0) == 7.0
    assert shatah_denominator(0.0, 0.0) == 3.0


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_denominator_is_at_least_three(xi, eta):
    assert shatah_denominator(xi, eta) >= 3.0 - 1e-9


@pytest.mark.parametrize("alpha0", [1.0, -0.5, 2.5])
def test_symbols_at_origin(alpha0):
    k0, k2 = shatah_symbols(alpha0)
    assert k0(0.0, 0.0) == pytest.approx(alpha0 / 3)
    assert k2(0.0, 0.0) == pytest.approx(2 * alpha0 / 3)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_symbols_are_symmetric(xi, eta):
    k0, k2 = shatah_symbols(1.3)
    assert k0(xi, eta) == pytest.approx(k0(eta, xi), rel=1e-12, abs=1e-15)
    assert k2(xi, eta) == pytest.approx(k2(eta, xi), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("which", [0, 1])
@pytest.mark.parametrize("axis", [1, 2])
def test_closed_form_partials_match_differences(which, axis):
    K = shatah_symbols(1.0)[which]
    rng = np.random.default_rng(3)
    xi, eta = rng.uniform(-4, 4, size=(2, 50))
    h = 1e-6
    if axis == 1:
        fd = (K(xi + h, eta) - K(xi - h, eta)) / (2 * h)
    else:
        fd = (K(xi, eta + h) - K(xi, eta - h)) / (2 * h)
    np.testing.assert_allclose(K.partial(axis)(xi, eta), fd, atol=1e-8)


def test_class_membership():
    k0, k2 = shatah_symbols(1.0)
    for K in (k0, k2, ONE):
        assert np.isfinite(K.class_constant)
        assert K.check_class()
    assert ONE.class_constant == pytest.approx(1.0)
    assert not k2.check_class(C=0.5 * k2.class_constant)


def test_parse_symbol_spellings_agree():
    a = parse_symbol("(1 - 2*xi*eta) / (4*xi^2 + 4*eta^2 + 4*xi*eta + 3)")
    b = parse_symbol("(1 − 2×ξ×η) / (4ξ^2 + 4η^2 + 4ξη + 3)".replace("ξη", "ξ*η")
                     .replace("4ξ", "4*ξ").replace("4η", "4*η"))
    k0 = get_symbol("shatah_k0", 1.0)
    xi, eta = np.random.default_rng(0).normal(size=(2, 30))
    np.testing.assert_allclose(a(xi, eta), k0(xi, eta), rtol=1e-13)
    np.testing.assert_allclose(b(xi, eta), k0(xi, eta), rtol=1e-13)
    c = parse_symbol("<xi> * <eta>")
    np.testing.assert_allclose(c(xi, eta), np.sqrt((1 + xi**2) * (1 + eta**2)))


def test_parse_symbol_flags_origin_vanishing():
    assert parse_symbol("xi + eta").vanishes_at_origin
    assert not parse_symbol("1 + xi").vanishes_at_origin


@pytest.mark.parametrize("expr", ["__import__('os')", "xi.real", "zeta + 1", "'a'", "xi +"])
def test_parse_symbol_rejects_bad_input(expr):
    with pytest.raises(ConfigError):
        parse_symbol(expr)


def test_catalogue_lookup():
    assert get_symbol("one") is ONE
    assert get_symbol("shatah_k2", 3.0)(0.0, 0.0) == pytest.approx(2.0)
    assert get_symbol("xi*eta")(2.0, 3.0) == pytest.approx(6.0)


# --- application -------------------------------------------------------------------------

@pytest.mark.parametrize("j,l", [(3, 5), (-4, 9), (0, 0), (10, -2)])
def test_plane_waves_are_eigenfunctions(j, l):
    rho = 2.0
    k0 = get_symbol("shatah_k0", 1.0)
    u, v = plane_wave(PI_GRID, rho, j), plane_wave(PI_GRID, rho, l)
    out = apply(k0, u, v)
    xi = frequencies(PI_GRID, rho)
    expected = k0(xi[j], xi[l]) * np.exp(1j * (j + l) * PI_GRID.y_samples)
    np.testing.assert_allclose(out.values, expected, atol=1e-12)


def test_symbol_one_is_the_product():
    rng = np.random.default_rng(1)
    u = random_field(GRID, 1.5, rng, band=0.4)
    v = random_field(GRID, 1.5, rng, band=0.4)
    ref = apply_reference(ONE, u, v)
    np.testing.assert_allclose(ref.values, u.values * v.values, atol=1e-12)
    np.testing.assert_allclose(apply_fast(ONE, u, v).values, ref.values, atol=1e-12)


def test_one_fast_path_matches_dealiased_product():
    rng = np.random.default_rng(2)
    u = random_field(GRID, 1.0, rng, band=0.9)
    v = random_field(GRID, 1.0, rng, band=0.9)
    np.testing.assert_allclose(apply(ONE, u, v).values, dealiased_product(u, v).values,
                               atol=1e-12)
    np.testing.assert_allclose(apply(ONE, u, v, fast=False).values,
                               dealiased_product(u, v).values, atol=1e-12)


def _quadrature_k0(alpha0, rho, ys, shift=0.3):
    """Independent oracle: tensor trapezoid over the analytic gaussian transforms."""
    xi = np.linspace(-8.0, 8.0, 1601)
    d = xi[1] - xi[0]
    uhat = rho * math.sqrt(math.pi) * np.exp(-(rho * xi) ** 2 / 4)
    vhat = uhat * np.exp(-1j * rho * xi * shift)
    X, E = np.meshgrid(xi, xi, indexing="ij")
    kern = alpha0 * (1 - 2 * X * E) / (4 * X**2 + 4 * E**2 + 4 * X * E + 3)
    w = kern * np.outer(uhat, vhat)
    out = []
    for y in ys:
        phase = np.exp(1j * rho * y * xi)
        out.append(phase @ w @ phase * d * d / (4 * math.pi**2))
    return np.array(out)


def test_k0_matches_dense_quadrature():
    rho = 2.0
    y = GRID.y_samples
    u = Field(np.exp(-y**2), rho, GRID)
    v = Field(np.exp(-(y - 0.3) ** 2), rho, GRID)
    out = apply(get_symbol("shatah_k0", 1.0), u, v)
    idx = np.searchsorted(y, np.linspace(-2.0, 2.0, 8))
    expected = _quadrature_k0(1.0, rho, y[idx])
    np.testing.assert_allclose(out.values[idx], expected, atol=1e-8)


def test_apply_validates_inputs():
    u = Field.zeros(GRID, 1.0)
    with pytest.raises(GridMismatchError):
        apply(ONE, u, Field.zeros(GRID, 2.0))
    with pytest.raises(GridMismatchError):
        apply(ONE, u, Field.zeros(HyperGrid(6.0, 128), 1.0))
    with pytest.raises(ConfigError):
        apply_fast(get_symbol("shatah_k0"), u, u)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_apply_is_bilinear(a, b):
    rng = np.random.default_rng(4)
    k2 = get_symbol("shatah_k2", 1.0)
    u1, u2, v = (random_field(PI_GRID, 2.0, rng) for _ in range(3))
    lhs = apply(k2, u1 * a + u2 * b, v).values
    rhs = a * apply(k2, u1, v).values + b * apply(k2, u2, v).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)))


# --- Leibniz rules ----------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["shatah_k0", "shatah_k2", "one"])
def test_dy_leibniz_rule(name):
    rng = np.random.default_rng(5)
    K = get_symbol(name, 1.0)
    u = random_field(GRID, 2.0, rng, smoothness=0.05)
    v = random_field(GRID, 2.0, rng, smoothness=0.05)
    assert leibniz_dy_residual(K, u, v) < 1e-9


def test_dy_leibniz_zero_inputs():
    z = Field.zeros(GRID, 2.0)
    assert leibniz_dy_residual(get_symbol("shatah_k0"), z, z) == 0.0


def test_dy_leibniz_random_sweep():
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(50):
        K = get_symbol(("shatah_k0", "shatah_k2")[i % 2], rng.uniform(-2, 2))
        rho = rng.uniform(1.0, 8.0)
        u = random_field(GRID, rho, rng, smoothness=0.05)
        v = random_field(GRID, rho, rng, smoothness=0.05)
        worst = max(worst, leibniz_dy_residual(K, u, v))
    assert worst < 1e-8


def _families(rho, h, grid=GRID):
    y = grid.y_samples

    def u_of(r):
        return Field(np.exp(-(1 + 0.1 * r) * y**2) * np.cos(0.5 * r * y), r, grid)

    def v_of(r):
        return Field(np.exp(-(y - 0.3) ** 2 / (1 + 0.05 * r)), r, grid)

    return ([u_of(rho + j * h) for j in (-1, 0, 1)], [v_of(rho + j * h) for j in (-1, 0, 1)])


@pytest.mark.parametrize("name", ["shatah_k0", "shatah_k2"])
def test_rho_leibniz_defect_is_second_order(name):
    K = get_symbol(name, 1.0)
    res = [leibniz_drho_residual(K, *_families(2.0, h)) for h in (2e-2, 1e-2, 5e-3)]
    for a, b in zip(res, res[1:]):
        assert 3.5 <= a / b <= 4.5


def test_rho_leibniz_constant_symbol_has_no_frozen_term():
    # the frozen derivative vanishes, so only the FD error in the product rule is left
    us, vs = _families(2.0, 1e-3)
    assert np.max(np.abs(frozen_rho_derivative(ONE, us[1], vs[1]).values)) == 0.0
    assert leibniz_drho_residual(ONE, us, vs) < 1e-5


def test_rho_leibniz_k2_small_step():
    assert leibniz_drho_residual(get_symbol("shatah_k2"), *_families(2.0, 1e-3)) < 1e-6


def test_rho_leibniz_needs_three_points():
    us, vs = _families(2.0, 1e-2)
    with pytest.raises(StencilError):
        leibniz_drho_residual(ONE, us[:2], vs[:2])
    with pytest.raises(StencilError):
        leibniz_drho_residual(ONE, us[::-1], vs[::-1])


@pytest.mark.parametrize("name", ["shatah_k0", "shatah_k2"])
def test_frozen_derivatives_match_symbol_differences(name):
    """d_rho of K[u, v] with u, v frozen in y, against a five-point difference in rho."""
    K = get_symbol(name, 1.0)
    rng = np.random.default_rng(7)
    base_u = random_field(GRID, 2.0, rng, smoothness=0.05).values
    base_v = random_field(GRID, 2.0, rng, smoothness=0.05).values
    h = 1e-3

    def at(r):
        return apply(K, Field(base_u, r, GRID), Field(base_v, r, GRID)).values

    vals = [at(2.0 + j * h) for j in (-2, -1, 0, 1, 2)]
    d1 = (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
    d2 = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * h * h)
    u, v = Field(base_u, 2.0, GRID), Field(base_v, 2.0, GRID)
    np.testing.assert_allclose(frozen_rho_derivative(K, u, v).values, d1, atol=1e-8)
    np.testing.assert_allclose(frozen_rho_derivative2(K, u, v).values, d2, atol=1e-5)


# --- dyadic kernel bounds --------------------------------------------------------------------

def test_kernel_bound_for_one_is_holder():
    assert dyadic_kernel_bound(ONE, 1, 3, samples=30) <= 1.5


def test_kernel_bound_k2_frozen_regression():
    val = dyadic_kernel_bound(get_symbol("shatah_k2"), 2, 5, 2, "inf", 2, samples=30)
    assert 0.0 < val <= 4.0


def test_kernel_bound_zero_symbol():
    assert dyadic_kernel_bound(parse_symbol("0*xi"), 1, 2, samples=10) == 0.0


def test_kernel_bound_argument_checks():
    with pytest.raises(ConfigError):
        dyadic_kernel_bound(ONE, 3, 1)
    with pytest.raises(ConfigError):
        dyadic_kernel_bound(ONE, 1, 2, 1, 1, 1)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgnf.errors import ConfigError, StencilError
from kgnf.hypergrid import Field, HyperGrid
from kgnf.spectral import (bernstein_ratio, dealiased_product, dy, frequencies,
                           ft_rho_commutator_residual, h1_norm, inverse_semiclassical_ft,
                           l2_norm, linf_norm, lp_project, lp_symbol, norm_n, norm_s, norm_sdot,
                           parseval_defect, random_field, refine, sdot_candidates,
                           semiclassical_ft, symbol_seminorm_s12, truncate)

PI_GRID = HyperGrid(math.pi, 256)  # wavenumbers are the integers


def plane_wave(grid, rho, j, amp=1.0):
    return Field(amp * np.exp(1j * grid.wavenumbers[j] * grid.y_samples), rho, grid)


def seeded(seed):
    return np.random.default_rng(seed)


# --- transform -----------------------------------------------------------------------

@pytest.mark.parametrize("rho", [1.0, 3.7])
def test_plane_wave_has_a_single_bin(rho):
    u = plane_wave(PI_GRID, rho, 7)
    c = np.abs(semiclassical_ft(u).coefficients)
    assert int(np.argmax(c)) == 7
    assert np.sum(c > 1e-10 * c.max()) == 1
    assert semiclassical_ft(u).xi[7] == pytest.approx(7 / rho)


def test_zero_field_has_zero_spectrum():
    assert not np.any(semiclassical_ft(Field.zeros(PI_GRID, 2.0)).coefficients)


@given(st.integers(0, 10_000), st.floats(1.0, 500.0))
def test_transform_round_trip(seed, rho):
    u = random_field(HyperGrid(4.0, 128), rho, seeded(seed), real=False)
    back = inverse_semiclassical_ft(semiclassical_ft(u))
    assert np.max(np.abs(back.values - u.values)) < 1e-12


def test_transform_matches_direct_riemann_sum():
    g = HyperGrid(3.0, 64)
    u = random_field(g, 2.5, seeded(3), real=False)
    s = semiclassical_ft(u)
    direct = np.array([u.rho * g.spacing * np.sum(np.exp(-1j * u.rho * xi * g.y_samples) * u.values)
                       for xi in s.xi])
    assert np.max(np.abs(direct - s.coefficients)) < 1e-12


@given(st.integers(0, 10_000), st.floats(1.0, 300.0))
def test_parseval(seed, rho):
    assert parseval_defect(random_field(HyperGrid(5.0, 256), rho, seeded(seed))) < 1e-12


# --- rho-commutator -------------------------------------------------------------------

def _commutator_family(func, rho, h, grid):
    return [Field(func(r, grid.y_samples), r, grid) for r in (rho - h, rho, rho + h)]


@pytest.mark.parametrize("func", [
    lambda r, y: np.exp(-y**2),              # rho-independent gaussian
    lambda r, y: np.exp(1j * r * 0.8 * y) * np.exp(-y**2 / 4),  # fixed semiclassical frequency
])
def test_commutator_residual_is_second_order(func):
    g = HyperGrid(8.0, 256)
    r1 = ft_rho_commutator_residual(_commutator_family(func, 3.0, 1e-2, g))
    r2 = ft_rho_commutator_residual(_commutator_family(func, 3.0, 5e-3, g))
    assert 3.5 <= r1 / r2 <= 4.5


def test_commutator_residual_of_zero():
    g = HyperGrid(4.0, 64)
    fam = [Field.zeros(g, r) for r in (1.9, 2.0, 2.1)]
    assert ft_rho_commutator_residual(fam) == 0.0


def test_commutator_needs_three_equally_spaced_members():
    g = HyperGrid(4.0, 64)
    with pytest.raises(StencilError):
        ft_rho_commutator_residual([Field.zeros(g, 2.0)] * 2)
    with pytest.raises(StencilError):
        ft_rho_commutator_residual([Field.zeros(g, r) for r in (1.0, 2.0, 2.5)])


# --- Littlewood-Paley --------------------------------------------------------------------

def test_dyadic_block_on_its_own_frequency():
    u = plane_wave(PI_GRID, 1.0, 32)  # wavenumber 2^5
    assert np.max(np.abs(lp_project(u, 5).values - u.values)) < 1e-12
    assert np.max(np.abs(lp_project(u, 8).values)) < 1e-12


@given(st.integers(0, 10_000), st.floats(1.0, 256.0))
def test_partition_of_unity(seed, rho):
    g = HyperGrid(6.0, 512)
    u = random_field(g, rho, seeded(seed), band=0.6)
    kmax = int(math.floor(math.log2(np.abs(g.wavenumbers).max()))) + 1
    total = sum((lp_project(u, k).values for k in range(kmax + 1)), np.zeros(g.n_points))
    assert np.max(np.abs(total - u.values)) < 1e-12


@given(st.floats(0.0, 1e4), st.integers(1, 12))
def test_below_is_sum_of_blocks(freq, k):
    f = np.array([freq])
    blocks = sum(lp_symbol(f, j) for j in range(k))
    assert lp_symbol(f, k, "below")[0] == pytest.approx(blocks[0], abs=1e-13)


def test_bernstein_constant_on_hundred_fields():
    g = HyperGrid(6.0, 512)
    rng = seeded(0)
    worst = 0.0
    for _ in range(100):
        u = random_field(g, float(2 ** rng.uniform(0, 8)), rng, band=0.5)
        worst = max(worst, max(bernstein_ratio(u, k) for k in range(1, 8)))
    assert worst <= 1.1


def test_lp_symbol_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        lp_symbol(np.ones(3), 2, mode="between")
    with pytest.raises(ConfigError):
        lp_project(Field.zeros(PI_GRID, 1.0), 2, scale="octave")


# --- D_y ----------------------------------------------------------------------------------

def test_dy_plane_wave_eigenvalue():
    u = plane_wave(PI_GRID, 2.0, 5)
    assert np.max(np.abs(dy(u).values - 2.5 * u.values)) < 1e-12
    assert np.max(np.abs(dy(u, 2).values - 6.25 * u.values)) < 6.25e-12


def test_dy_of_constant_vanishes():
    assert linf_norm(dy(Field(np.full(256, 3.0), 4.0, PI_GRID))) < 1e-13


def _fd4_error(n):
    g = HyperGrid(8.0, n)
    rho = 2.0
    u = Field(np.exp(-g.y_samples**2), rho, g)
    v, d = u.values, g.spacing
    fd = (-np.roll(v, -2) + 8 * np.roll(v, -1) - 8 * np.roll(v, 1) + np.roll(v, 2)) / (12 * d)
    return np.max(np.abs(dy(u).values - fd / (1j * rho)))


def test_dy_agrees_with_fourth_order_differences():
    e1, e2 = _fd4_error(128), _fd4_error(256)
    assert e1 < 1e-3
    assert 12 <= e1 / e2 <= 20


# --- products and resampling ---------------------------------------------------------------

@given(st.integers(0, 10_000))
def test_dealiased_product_of_band_limited_fields_is_exact(seed):
    g = HyperGrid(4.0, 128)
    rng = seeded(seed)
    u = random_field(g, 2.0, rng, band=0.4, real=False)
    v = random_field(g, 2.0, rng, band=0.4, real=False)
    assert np.max(np.abs(dealiased_product(u, v).values - u.values * v.values)) < 1e-12


def test_refine_then_truncate_is_identity():
    g = HyperGrid(4.0, 64)
    u = random_field(g, 3.0, seeded(1), band=0.5, real=False)
    assert np.max(np.abs(truncate(refine(u, 4), g).values - u.values)) < 1e-13
    fine = refine(u, 4)
    assert np.max(np.abs(fine.values[::4] - u.values)) < 1e-12


# --- norms --------------------------------------------------------------------------------

def test_norms_of_zero():
    z = Field.zeros(PI_GRID, 1.0)
    assert norm_s(z, z).s_norm == 0.0
    assert norm_n(z).n_norm == 0.0
    assert norm_sdot(z, z, sdot_candidates(z, z)).sdot_norm == 0.0


def test_s_norm_of_low_frequency_plane_wave():
    A, j, delta = 0.3, 2, 0.05
    g = PI_GRID
    u = plane_wave(g, 1.0, j, A)
    L = 2 * g.y_max
    w = float(g.wavenumbers[j])
    # independent closed forms of the three constituents at rho = 1
    h1 = math.sqrt((1 + w * w) * A * A * L + w * w * (1 + w * w) * A * A * L)
    expected = h1 + A + A * math.sqrt(L)
    got = norm_s(u, Field.zeros(g, 1.0), delta)
    assert got.s_norm == pytest.approx(expected, rel=1e-12)
    assert got.components["S:L2"] == pytest.approx(A * math.sqrt(L), rel=1e-12)


def test_h1_norm_matches_quadrature():
    g = HyperGrid(8.0, 512)
    y = g.y_samples
    u = Field(np.exp(-y**2), 1.0, g)
    dens = np.exp(-2 * y**2) * (1 + 4 * y**2)
    assert h1_norm(u) == pytest.approx(math.sqrt(np.sum(dens) * g.spacing), rel=1e-10)


@given(st.integers(0, 10_000), st.floats(0.0, 8.0))
def test_embeddings_on_random_pairs(seed, log_rho):
    rho = 2.0**log_rho
    g = HyperGrid(6.0, 256)
    rng = seeded(seed)
    u = random_field(g, rho, rng, band=0.5)
    ud = random_field(g, rho, rng, band=0.5)
    s = norm_s(u, ud).s_norm
    sdot = norm_sdot(u, ud, sdot_candidates(u, ud)).sdot_norm
    assert norm_n(u * (1 / rho)).n_norm <= sdot * (1 + 1e-12)
    assert norm_n(ud * (1 / rho)).n_norm <= s * (1 + 1e-12)
    assert sdot <= 2 * s * (1 + 1e-12)


def test_delta_outside_range_is_rejected():
    z = Field.zeros(PI_GRID, 1.0)
    with pytest.raises(ConfigError):
        norm_s(z, z, 0.5)


# --- symbol seminorm -----------------------------------------------------------------------

def test_seminorm_of_constant_symbol():
    g = HyperGrid(3.0, 64)
    patch = [Field(np.ones(64), 4.0 + j * 0.01, g) for j in range(-2, 3)]
    assert symbol_seminorm_s12(patch, 2) == pytest.approx(0.5, rel=1e-12)


def test_seminorm_of_half_power_symbol_is_location_independent():
    g = HyperGrid(4.0, 256)
    prof = 1 / np.cosh(g.y_samples)

    def patch(rho, h=0.01):
        return [Field(r**0.5 * prof, r, g) for r in rho + h * np.arange(-2, 3)]

    a, b = symbol_seminorm_s12(patch(3.0)), symbol_seminorm_s12(patch(40.0))
    assert abs(a / b - 1) < 0.05


def test_seminorm_needs_enough_stencil_points():
    g = HyperGrid(3.0, 64)
    with pytest.raises(StencilError):
        symbol_seminorm_s12([Field.zeros(g, 2.0)] * 3, 2)


def test_frequencies_scale_with_rho():
    assert np.allclose(frequencies(PI_GRID, 4.0) * 4.0, PI_GRID.wavenumbers)

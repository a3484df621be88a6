"""Semiclassical Fourier analysis on the y-grid.

Conventions: the forward transform is  u_hat(xi) = rho * int exp(-i rho xi y) u dy
on the lattice xi_j = 2 pi j / (2 y_max rho), and the inverse is
u = (2 pi)^-1 int exp(i rho y xi) u_hat dxi.  The semiclassical derivative
D_y = (i rho)^-1 d/dy is multiplication by xi.

Littlewood-Paley pieces come in two scalings:

* ``scale="wavenumber"`` (default): the frequency variable is rho*|xi|, the
  wavenumber of d/dy.  Only k >= 0 is allowed and P_0 is the whole block
  below 2 (P_0 = P_{<0}).
* ``scale="semiclassical"``: the frequency variable is |xi| itself and every
  integer k is allowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cutoffs import low_pass_profile
from .errors import ConfigError, DomainError, GridMismatchError, StencilError
from .hypergrid import Field, HyperGrid

__all__ = [
    "Field", "SpectralField", "NormReport", "frequencies", "semiclassical_ft",
    "inverse_semiclassical_ft", "apply_multiplier", "dy", "japanese_power", "lp_symbol",
    "lp_project", "lp_below", "refine", "truncate", "dealiased_product", "l2_norm",
    "linf_norm", "h1_norm", "norm_s", "norm_n", "norm_sdot", "sdot_candidates",
    "norm_report", "ft_rho_commutator_residual", "ft_at", "symbol_seminorm_s12",
    "parseval_defect", "bernstein_ratio", "random_field",
]


def frequencies(grid: HyperGrid, rho: float) -> np.ndarray:
    """Semiclassical frequency lattice in FFT order."""
    return grid.wavenumbers / rho


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Semiclassical spectrum on the lattice xi_j (FFT order)."""

    coefficients: np.ndarray
    rho: float
    grid: HyperGrid

    @property
    def xi(self) -> np.ndarray:
        return frequencies(self.grid, self.rho)

    @property
    def dxi(self) -> float:
        return 2.0 * np.pi / (2.0 * self.grid.y_max * self.rho)


def _phase(grid: HyperGrid) -> np.ndarray:
    # exp(-i rho xi_j y_0) with y_0 = -y_max equals (-1)^j
    return np.where(grid.mode_index % 2 == 0, 1.0, -1.0)


def semiclassical_ft(u: Field) -> SpectralField:
    g = u.grid
    coeffs = u.rho * g.spacing * _phase(g) * np.fft.fft(u.values)
    return SpectralField(coeffs, u.rho, g)


def inverse_semiclassical_ft(s: SpectralField) -> Field:
    g = s.grid
    vals = np.fft.ifft(s.coefficients * _phase(g)) / (s.rho * g.spacing)
    return Field(vals, s.rho, g)


def apply_multiplier(u: Field, symbol) -> Field:
    """Fourier multiplier given as an array over the lattice or a callable of xi."""
    if callable(symbol):
        symbol = symbol(frequencies(u.grid, u.rho))
    return u.with_values(np.fft.ifft(np.fft.fft(u.values) * symbol))


def dy(u: Field, order: int = 1) -> Field:
    """Semiclassical derivative D_y^order, i.e. multiplication by xi^order."""
    if order < 0:
        raise ValueError("order must be nonnegative")
    if order == 0:
        return u
    return apply_multiplier(u, frequencies(u.grid, u.rho) ** order)


def japanese_power(u: Field, power: float) -> Field:
    """<D_y>^power with <xi> = sqrt(1 + xi^2)."""
    xi = frequencies(u.grid, u.rho)
    return apply_multiplier(u, (1.0 + xi * xi) ** (power / 2.0))


# --- Littlewood-Paley ------------------------------------------------------

def _lp_variable(grid, rho, scale):
    if scale == "wavenumber":
        return np.abs(grid.wavenumbers)
    if scale == "semiclassical":
        return np.abs(grid.wavenumbers) / rho
    raise ConfigError(f"scale must be 'wavenumber' or 'semiclassical', got {scale!r}")


def lp_symbol(freq, k: float, mode: str = "at", scale: str = "wavenumber") -> np.ndarray:
    """Dyadic cutoff evaluated on a frequency array (already in the chosen scale).

    ``mode="below"`` gives P_{<k} = sum_{j<k} P_j, which has profile p(freq / 2^(k-1)).
    Non-integer k is accepted (time-dependent cutoffs use k = c log2 rho).
    """
    freq = np.abs(np.asarray(freq, dtype=float))
    if scale == "wavenumber" and k < 0:
        raise DomainError("in (rho, y) variables the dyadic index must be >= 0")
    if scale not in ("wavenumber", "semiclassical"):
        raise ConfigError(f"unknown scale {scale!r}")
    if mode == "below":
        if scale == "wavenumber" and k <= 0:
            return np.zeros_like(freq)
        return low_pass_profile(freq / 2.0 ** (k - 1))
    if mode != "at":
        raise ConfigError(f"mode must be 'at' or 'below', got {mode!r}")
    if scale == "wavenumber" and k == 0:
        return low_pass_profile(freq)
    return low_pass_profile(freq / 2.0**k) - low_pass_profile(freq / 2.0 ** (k - 1))


def lp_project(u: Field, k: float, mode: str = "at", scale: str = "wavenumber") -> Field:
    """Apply P_k (mode="at") or P_{<k} (mode="below") in the requested scale."""
    freq = _lp_variable(u.grid, u.rho, scale)
    return apply_multiplier(u, lp_symbol(freq, k, mode, scale))


def lp_below(u: Field, k: float) -> Field:
    return lp_project(u, k, "below")


# --- resolution changes and dealiased products ------------------------------

def _pad_spectrum(hat: np.ndarray, n_new: int) -> np.ndarray:
    n = hat.size
    if n_new == n:
        return hat.copy()
    out = np.zeros(n_new, complex)
    half = n // 2
    out[:half] = hat[:half]
    out[n_new - half + 1:] = hat[half + 1:]
    # split the Nyquist bin so real inputs stay real
    out[half] = 0.5 * hat[half]
    out[n_new - half] = 0.5 * hat[half]
    return out


def _truncate_spectrum(hat: np.ndarray, n_new: int) -> np.ndarray:
    n = hat.size
    half = n_new // 2
    out = np.empty(n_new, complex)
    out[:half] = hat[:half]
    out[half + 1:] = hat[n - half + 1:]
    out[half] = hat[n - half]
    return out


def refine(u: Field, factor: int) -> Field:
    """Spectral interpolation onto a grid with factor times as many points."""
    if factor == 1:
        return u
    g = u.grid.refined(factor)
    hat = _pad_spectrum(np.fft.fft(u.values), g.n_points) * factor
    return Field(np.fft.ifft(hat), u.rho, g)


def truncate(u: Field, grid: HyperGrid) -> Field:
    """Keep the modes representable on a coarser grid with the same y_max."""
    if grid.y_max != u.grid.y_max:
        raise GridMismatchError("truncate needs a common y_max")
    factor = u.grid.n_points // grid.n_points
    hat = _truncate_spectrum(np.fft.fft(u.values), grid.n_points) / factor
    return Field(np.fft.ifft(hat), u.rho, grid)


def dealiased_product(*factors, pad: int | None = None) -> Field:
    """Pointwise product computed on a zero-padded grid and truncated back.

    Padding defaults to 2x for two factors and 4x for three or more.  Plain
    arrays are accepted as pointwise coefficients sampled on the base grid.
    """
    fields = [f for f in factors if isinstance(f, Field)]
    if not fields:
        raise ValueError("need at least one Field")
    base = fields[0]
    for f in fields[1:]:
        base.check_compatible(f)
    if pad is None:
        pad = 2 if len(factors) <= 2 else 4
    prod = None
    for f in factors:
        vals = refine(f if isinstance(f, Field) else base.with_values(f), pad).values
        prod = vals if prod is None else prod * vals
    return truncate(Field(prod, base.rho, base.grid.refined(pad)), base.grid)


# --- norms -------------------------------------------------------------------

def l2_norm(u: Field) -> float:
    return float(np.sqrt(np.sum(np.abs(u.values) ** 2) * u.grid.spacing))


def linf_norm(u: Field) -> float:
    return float(np.max(np.abs(u.values)))


def h1_norm(u: Field) -> float:
    """|| <d_y> u ||_{L^2}, evaluated exactly in the spectrum."""
    g = u.grid
    hat = np.fft.fft(u.values)
    return float(np.sqrt(np.sum((1.0 + g.wavenumbers**2) * np.abs(hat) ** 2)
                         * g.spacing / g.n_points))


def _check_delta(delta):
    if not 0.0 < delta < 0.5:
        raise ConfigError(f"delta must lie in (0, 0.5), got {delta}")


def _vector_h1(*fields):
    return math.sqrt(sum(h1_norm(f) ** 2 for f in fields))


def _vector_linf(*fields):
    return float(np.max(np.sqrt(sum(np.abs(f.values) ** 2 for f in fields))))


def _vector_l2(*fields):
    return math.sqrt(sum(l2_norm(f) ** 2 for f in fields))


@dataclass
class NormReport:
    """Totals of the S, S-dot and N norms plus their named constituents.

    Totals that were not requested are NaN.  ``sdot_norm`` is the minimum over
    a finite candidate set and therefore an upper bound.
    """

    rho: float
    delta: float
    s_norm: float = float("nan")
    sdot_norm: float = float("nan")
    n_norm: float = float("nan")
    components: dict = field(default_factory=dict)

    def csv_header(self):
        return ["rho", "delta", "s", "sdot", "n"] + sorted(self.components)

    def csv_row(self):
        return [self.rho, self.delta, self.s_norm, self.sdot_norm, self.n_norm] + [
            self.components[k] for k in sorted(self.components)]

    def merge(self, other: "NormReport") -> "NormReport":
        out = NormReport(self.rho, self.delta, self.s_norm, self.sdot_norm, self.n_norm,
                         dict(self.components))
        for name in ("s_norm", "sdot_norm", "n_norm"):
            val = getattr(other, name)
            if not math.isnan(val):
                setattr(out, name, val)
        out.components.update(other.components)
        return out


def norm_s(u: Field, udot: Field, delta: float = 0.05) -> NormReport:
    """rho^-delta ||(u, u_dot, rho^-1 d_y u)||_{H^1} + ||(u, u_dot)||_{L^inf cap L^2}.

    The intersection norm is the sum of the two norms; vector norms are Euclidean.
    """
    _check_delta(delta)
    u.check_compatible(udot)
    rho = u.rho
    dyu = apply_multiplier(u, 1j * u.grid.wavenumbers / rho)
    h1 = rho**-delta * _vector_h1(u, udot, dyu)
    linf = _vector_linf(u, udot)
    l2 = _vector_l2(u, udot)
    comps = {"S:rho^-delta H1": h1, "S:Linf": linf, "S:L2": l2}
    return NormReport(rho, delta, s_norm=h1 + linf + l2, components=comps)


def norm_n(F: Field, delta: float = 0.05) -> NormReport:
    """rho^(1-delta) ||F||_{H^1} + rho ||F||_{L^inf cap L^2}."""
    _check_delta(delta)
    rho = F.rho
    h1 = rho ** (1 - delta) * h1_norm(F)
    linf = rho * linf_norm(F)
    l2 = rho * l2_norm(F)
    comps = {"N:rho^(1-delta) H1": h1, "N:rho Linf": linf, "N:rho L2": l2}
    return NormReport(rho, delta, n_norm=h1 + linf + l2, components=comps)


def sdot_candidates(u: Field, udot: Field, companion: Field | None = None, low_pass_k=None):
    """Finite candidate set for the infimum in the S-dot norm.

    {0, -<D_y>^-2 u_dot} plus a low-pass of the companion field when given
    (for u = d_rho w the natural companion is w itself).
    """
    cands = [Field.zeros(u.grid, u.rho), -japanese_power(udot, -2.0)]
    if companion is not None:
        if low_pass_k is None:
            low_pass_k = max(1.0, math.log2(companion.grid.wavenumbers.max()) - 1)
        cands.append(lp_below(companion, low_pass_k))
    return cands


def norm_sdot(u: Field, udot: Field, candidates=(), delta: float = 0.05) -> NormReport:
    """Upper bound for the S-dot norm: minimum over v in {0} + candidates.

    Each candidate v enters ||v||_S with v_dot = 0.
    """
    _check_delta(delta)
    u.check_compatible(udot)
    rho = u.rho
    base = rho**-delta * h1_norm(u) + linf_norm(u) + l2_norm(u)
    zero = Field.zeros(u.grid, rho)
    best = math.inf
    best_idx = -1
    for idx, v in enumerate([zero, *candidates]):
        u.check_compatible(v)
        # udot - rho^-2 d_y^2 v, with d_y^2 -> -k^2
        resid = udot + apply_multiplier(v, (u.grid.wavenumbers / rho) ** 2)
        val = (rho**-delta * h1_norm(resid) + linf_norm(resid) + l2_norm(resid)
               + norm_s(v, zero, delta).s_norm)
        if val < best:
            best, best_idx = val, idx
    comps = {"Sdot:base": base, "Sdot:inf_upper_bound": best, "Sdot:candidate": float(best_idx)}
    return NormReport(rho, delta, sdot_norm=base + best, components=comps)


def norm_report(u: Field, udot: Field, F: Field | None = None, candidates=(),
                delta: float = 0.05) -> NormReport:
    rep = norm_s(u, udot, delta).merge(norm_sdot(u, udot, candidates, delta))
    if F is not None:
        rep = rep.merge(norm_n(F, delta))
    return rep


# --- rho-commutator of the transform ------------------------------------------

def ft_at(u: Field, xi: np.ndarray, rho: float | None = None) -> np.ndarray:
    """Direct Riemann-sum transform rho * sum exp(-i rho xi y) u dy at arbitrary xi."""
    rho = u.rho if rho is None else rho
    y = u.grid.y_samples
    kern = np.exp(-1j * rho * np.outer(xi, y))
    return rho * u.grid.spacing * (kern @ u.values)


def ft_rho_commutator_residual(u_family) -> float:
    """Sup over the central lattice of the defect in [d_rho, F_rho] = rho^-1 d_xi xi F_rho.

    ``u_family`` holds Fields at rho - h, rho, rho + h.  The d_rho terms are
    centered differences, so the residual is O(h^2).
    """
    if len(u_family) != 3:
        raise StencilError("need Fields at rho - h, rho, rho + h")
    lo, mid, hi = u_family
    if lo.grid != mid.grid or hi.grid != mid.grid:
        raise GridMismatchError("family members live on different grids")
    h = 0.5 * (hi.rho - lo.rho)
    if not (h > 0 and math.isclose(mid.rho - lo.rho, hi.rho - mid.rho, rel_tol=1e-9)):
        raise StencilError("family must be equally spaced in rho")
    rho = mid.rho
    xi = frequencies(mid.grid, rho)
    y = mid.grid.y_samples
    lhs = (ft_at(hi, xi) - ft_at(lo, xi)) / (2 * h)
    udot = mid.with_values((hi.values - lo.values) / (2 * h))
    kern = np.exp(-1j * rho * np.outer(xi, y))
    # d_xi (xi F u) = rho * sum (1 - i rho xi y) exp(-i rho xi y) u dy
    dxi_term = rho * mid.grid.spacing * ((kern * (1.0 - 1j * rho * np.outer(xi, y))) @ mid.values)
    resid = lhs - ft_at(udot, xi) - dxi_term / rho
    return float(np.max(np.abs(resid)))


# --- S^{1/2}_N seminorm ------------------------------------------------------

def _fd_weights(order, npts):
    # centered weights on offsets -m..m for derivative ``order``
    m = npts // 2
    offsets = np.arange(-m, m + 1, dtype=float)
    A = np.vander(offsets, increasing=True).T
    b = np.zeros(npts)
    b[order] = math.factorial(order)
    return np.linalg.solve(A, b)


def symbol_seminorm_s12(patch, N: int = 2) -> float:
    """max_{n+m <= N} sup |d_rho^n D_y^m f| / rho^(((1-n-m)/2)_+) at the patch centre.

    ``patch`` is a sequence of Fields on an equally spaced rho-stencil centred on
    the evaluation time; it needs at least 2*ceil((N+1)/2)+1 members for
    second-order accurate rho-derivatives up to order N (3 for N <= 1, 5 for
    N <= 3).
    """
    if not 0 <= N <= 3:
        raise ValueError("N must lie in 0..3")
    patch = list(patch)
    need = 1 if N == 0 else (3 if N == 1 else 5)
    if len(patch) < need or len(patch) % 2 == 0:
        raise StencilError(f"N={N} needs an odd stencil of at least {need} fields")
    c = len(patch) // 2
    if N == 0:
        patch = [patch[c]]
        c = 0
    centre = patch[c]
    rhos = np.array([f.rho for f in patch])
    h = (rhos[-1] - rhos[0]) / max(len(patch) - 1, 1)
    if len(patch) > 1 and not np.allclose(np.diff(rhos), h, rtol=1e-9, atol=0):
        raise StencilError("patch must be equally spaced in rho")
    rho = centre.rho
    best = 0.0
    for m in range(N + 1):
        dm = [dy(f, m).values for f in patch]
        for n in range(N + 1 - m):
            if n == 0:
                vals = dm[c]
            else:
                npts = 3 if n <= 2 else 5
                if len(patch) < npts:
                    raise StencilError("stencil too short for the requested order")
                w = _fd_weights(n, npts)
                half = npts // 2
                vals = sum(w[i] * dm[c - half + i] for i in range(npts)) / h**n
            weight = rho ** max((1.0 - n - m) / 2.0, 0.0)
            best = max(best, float(np.max(np.abs(vals))) / weight)
    return best


# --- structural diagnostics --------------------------------------------------

def parseval_defect(u: Field) -> float:
    """Relative gap between ||u||_2^2 and (2 pi rho)^-1 sum |u_hat|^2 dxi."""
    s = semiclassical_ft(u)
    lhs = l2_norm(u) ** 2
    rhs = np.sum(np.abs(s.coefficients) ** 2) * s.dxi / (2.0 * np.pi * u.rho)
    return float(abs(lhs - rhs) / max(lhs, 1e-300))


def bernstein_ratio(u: Field, k: int) -> float:
    """||P_k u||_inf / (2^(k/2) ||P_k u||_2) in the wavenumber scale (0 for P_k u = 0)."""
    piece = lp_project(u, k)
    l2 = l2_norm(piece)
    if l2 == 0.0:
        return 0.0
    return linf_norm(piece) / (2.0 ** (k / 2) * l2)


def random_field(grid: HyperGrid, rho: float, rng: np.random.Generator, band: float = 0.25,
                 real: bool = True, smoothness: float = 0.0) -> Field:
    """Random field whose spectrum lives below ``band`` times the Nyquist wavenumber.

    ``smoothness`` > 0 damps mode j by exp(-smoothness * |j|); the result is
    normalised to unit sup norm.
    """
    j = np.abs(grid.mode_index)
    keep = j < band * grid.n_points / 2
    hat = (rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points))
    hat = hat * keep * np.exp(-smoothness * j)
    vals = np.fft.ifft(hat)
    if real:
        # symmetrising keeps the band limit
        vals = vals.real
    vals = vals / max(np.max(np.abs(vals)), 1e-300)
    return Field(vals, rho, grid)

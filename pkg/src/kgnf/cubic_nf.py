"""Cubic normal form for the variable-coefficient term rho^-1 beta_1 u^3.

For each dyadic block k,

    N_k = rho^-1 (f1 w^3 + f2 w^2 w' + f3 w w'^2 + f4 w'^3),   w = P_{<k} u, w' = d_rho w,

where the f_i come from two resonance symbols

    (Box_H + 1) K1 ~ 3 e^{i rho} beta_{1,k},    (Box_H + 1) K2 ~ e^{3 i rho} beta_{1,k},

solved differently on four time zones (high, dispersive, elliptic, smooth).
beta_{1,k} is the block P_k of the flat coefficient beta_1(rho y); all dyadic
indices are in the wavenumber scale |omega| ~ 2^k, so the semiclassical
frequency of the block is xi ~ 2^k / rho.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cutoffs import low_pass_profile, plateau, smooth_step
from .errors import CheckFailure, ConfigError, DomainError, GuardError, StencilError
from .hypergrid import Beta1Profile, Field, HyperGrid
from .solver import HyperbolicModel, Trajectory
from .spectral import (SpectralField, _fd_weights, apply_multiplier, dy, frequencies, h1_norm,
                       inverse_semiclassical_ft, l2_norm, linf_norm, lp_symbol, norm_n, refine,
                       truncate)

SQRT8 = math.sqrt(8.0)


# --- time-scale partition ------------------------------------------------------------

@dataclass(frozen=True)
class TimescalePartition:
    """Four cutoffs in rho summing to one.

    With s = log2 rho and S_a a smooth step rising on [a - w, a]:

        high       = 1 - S_{k-3}
        dispersive = S_{k-3} - S_b          b = min(k + 2, 2k)
        elliptic   = S_b - S_{2k}
        smooth     = S_{2k}

    so high vanishes for rho >= 2^(k-3), elliptic lives on rho > 2^(b-w) and
    smooth is identically one for rho >= 2^(2k).  ``dispersive_wide`` is one
    octave wider on both sides and equals one on the support of ``dispersive``.
    """

    k: int
    transition_width: float = 1.0
    high_offset: float = 3.0

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("the cubic correction starts at k = 1")
        if not 0 < self.transition_width <= 2:
            raise ConfigError("transition_width must lie in (0, 2] octaves")

    @property
    def b(self) -> int:
        return min(self.k + 2, 2 * self.k)

    def _S(self, rho, a):
        s = np.log2(np.asarray(rho, float))
        return smooth_step((s - a) / self.transition_width + 1.0)

    def high(self, rho):
        return 1.0 - self._S(rho, self.k - self.high_offset)

    def dispersive(self, rho):
        return self._S(rho, self.k - self.high_offset) - self._S(rho, self.b)

    def elliptic(self, rho):
        return self._S(rho, self.b) - self._S(rho, 2 * self.k)

    def smooth(self, rho):
        return self._S(rho, 2 * self.k)

    def dispersive_wide(self, rho):
        w = self.transition_width
        return self._S(rho, self.k - self.high_offset - w) - self._S(rho, self.b + w)

    def weights(self, rho) -> dict:
        return {"high": float(self.high(rho)), "dispersive": float(self.dispersive(rho)),
                "elliptic": float(self.elliptic(rho)), "smooth": float(self.smooth(rho))}

    @property
    def dispersive_support(self):
        return (max(1.0, 2.0 ** (self.k - self.high_offset - self.transition_width)),
                2.0 ** self.b)

    def to_dict(self):
        return {"k": self.k, "transition_width": self.transition_width,
                "high_offset": self.high_offset, "b": self.b}


def timescale_partition(k: int, transition_width: float = 1.0) -> TimescalePartition:
    return TimescalePartition(k, transition_width)


# --- coefficient blocks and non-dispersive symbols ---------------------------------------

def beta1_block(beta1: Beta1Profile, k: int, rho: float, grid: HyperGrid) -> Field:
    """P_k of the flat coefficient beta_1(rho y), built from its exact transform.

    In semiclassical variables the transform of y -> beta_1(rho y) is beta_1-hat(xi),
    so no sampling of the rapidly varying coefficient is needed.
    """
    hat = beta1.fourier(frequencies(grid, rho)) * lp_symbol(grid.wavenumbers, k, "at")
    return inverse_semiclassical_ft(SpectralField(hat, rho, grid))


def _block_spectrum(beta1, k, rho, grid):
    sym = lp_symbol(grid.wavenumbers, k, "at")
    return beta1.fourier(frequencies(grid, rho)) * sym, sym


def k1_symbol(k: int, rho: float, beta1: Beta1Profile, grid: HyperGrid,
              partition: TimescalePartition | None = None) -> Field:
    """K_{1,k} = 3 e^{i rho} (1 - h_smooth) D_y^-2 beta_{1,k}."""
    part = partition or TimescalePartition(k)
    weight = 1.0 - float(part.smooth(rho))
    if weight == 0.0 or beta1.is_zero:
        return Field.zeros(grid, rho)
    hat, sym = _block_spectrum(beta1, k, rho, grid)
    guard = np.abs(grid.wavenumbers) < 2.0 ** (k - 3)
    if np.any(np.abs(hat[guard]) > 0):
        raise GuardError(f"beta_1 block k={k} has spectral mass inside |omega| < 2^(k-3)")
    xi = frequencies(grid, rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        div = np.where(sym != 0, hat / xi**2, 0.0)
    out = inverse_semiclassical_ft(SpectralField(div, rho, grid))
    return out * (3.0 * weight * np.exp(1j * rho))


def k2_nondisp(k: int, rho: float, beta1: Beta1Profile, grid: HyperGrid,
               partition: TimescalePartition | None = None, guard_gap: float = 0.5) -> Field:
    """K_{2,k}^nondisp = e^{3 i rho} (h_elliptic + h_high) (D_y^2 - 8)^-1 beta_{1,k}."""
    part = partition or TimescalePartition(k)
    weight = float(part.elliptic(rho) + part.high(rho))
    if weight == 0.0 or beta1.is_zero:
        return Field.zeros(grid, rho)
    hat, sym = _block_spectrum(beta1, k, rho, grid)
    xi = frequencies(grid, rho)
    den = xi**2 - 8.0
    active = sym != 0
    if np.any(np.abs(den[active]) < guard_gap):
        raise GuardError(f"|xi^2 - 8| < {guard_gap} on the active spectrum (k={k}, rho={rho:g})")
    div = np.where(active, hat / np.where(active, den, 1.0), 0.0)
    out = inverse_semiclassical_ft(SpectralField(div, rho, grid))
    return out * (weight * np.exp(3j * rho))


# --- dispersive symbol via the Cartesian Duhamel integral -----------------------------------

_GL16 = np.polynomial.legendre.leggauss(16)


def _partial_weights(tau):
    """W[i, n] = int_{-1}^{tau_i} l_n(s) ds for the 16-point Gauss-Legendre Lagrange basis."""
    x, w = _GL16
    n = x.size
    Px = np.polynomial.legendre.legvander(x, n)            # P_j(x_n), j = 0..n
    Pt = np.polynomial.legendre.legvander(np.asarray(tau, float), n + 1)
    # int_{-1}^{tau} P_j = (P_{j+1} - P_{j-1}) / (2j + 1), and tau + 1 for j = 0
    integ = np.empty((Pt.shape[0], n))
    integ[:, 0] = Pt[:, 1] + 1.0
    for j in range(1, n):
        integ[:, j] = (Pt[:, j + 1] - Pt[:, j - 1]) / (2 * j + 1)
    coef = Px[:, :n] * (2 * np.arange(n) + 1) / 2.0       # l_n = w_n sum_j (2j+1)/2 P_j(x_n) P_j
    return (integ @ coef.T) * w[None, :]


class DispersiveDuhamel:
    """K~(t, x) = int_1^t sin((t-s)<D_x>)/<D_x> (e^{3is} h_disp(s) s^(-1/2) beta~_1) ds.

    beta~_1 keeps x-frequencies in (2^(-C-1), 2^(C+1)) (equal to one on
    [2^-C, 2^C]).  The x-dependence is a Fourier series on a period 2L chosen
    so that no periodic image reaches the evaluation points; the s-integral uses
    16-point Gauss-Legendre panels one period of the fastest phase wide, with
    exact partial-panel weights for evaluation times inside the source window.
    """

    def __init__(self, k: int, beta1: Beta1Profile, partition: TimescalePartition | None = None,
                 band: float = 5.0, tol: float = 1e-13, chunk: int = 128):
        self.k = k
        self.beta1 = beta1
        self.partition = partition or TimescalePartition(k)
        self.band = band
        self.tol = tol
        self.chunk = chunk
        self.s_lo, self.s_hi = self.partition.dispersive_support
        z = np.linspace(0.0, 2.0 ** (band + 1), 20001)
        mag = np.abs(self.beta_tilde_hat(z)) + np.abs(self.beta_tilde_hat(-z))
        big = np.nonzero(mag > tol * mag.max())[0] if mag.max() > 0 else np.array([0])
        self.zeta_min = 2.0 ** (-band - 1)
        self.zeta_max = float(z[min(big[-1] + 1, z.size - 1)])
        self.source_radius = abs(beta1.center) + 8.0 * beta1.width
        if beta1.profile == "sech2":
            self.source_radius = abs(beta1.center) + 20.0 * beta1.width

    def band_symbol(self, zeta):
        z = np.abs(np.asarray(zeta, float))
        return low_pass_profile(z / 2.0**self.band) - low_pass_profile(z / 2.0 ** (-self.band - 1))

    def beta_tilde_hat(self, zeta):
        return self.beta1.fourier(zeta) * self.band_symbol(zeta)

    def g(self, s):
        s = np.asarray(s, float)
        return np.exp(3j * s) * self.partition.dispersive(s) / np.sqrt(s)

    def _lattice(self, t, x):
        # an image source 2L away stays outside the light cone of every target
        L = 0.5 * float(np.max(np.abs(x), initial=0.0) + max(np.max(t, initial=0.0) - self.s_lo, 0.0)
                        + self.source_radius) + 10.0
        L = max(L, 40.0 / self.zeta_min)   # resolve the low edge of the band on the lattice
        dz = math.pi / L
        m = np.arange(max(1, math.ceil(self.zeta_min / dz)), math.floor(self.zeta_max / dz) + 1)
        zeta = m * dz
        return L, zeta, self.beta_tilde_hat(zeta), self.beta_tilde_hat(-zeta), np.sqrt(1 + zeta**2)

    def beta_tilde(self, x):
        """beta~_1 at the points x (for source checks)."""
        x = np.asarray(x, float)
        L, zeta, cp, cm, _ = self._lattice(np.zeros(1), x)
        out = np.zeros(x.shape, complex)
        for sl in _chunks(x.size, self.chunk):
            ex = np.exp(1j * np.outer(x.ravel()[sl], zeta))
            out.ravel()[sl] = (ex @ cp + np.conj(ex) @ cm) / (2 * L)
        return out

    def field(self, t, x):
        t = np.asarray(t, float).ravel()
        x = np.asarray(x, float).ravel()
        out = np.zeros(t.size, complex)
        if t.size == 0:
            return out
        L, zeta, cp, cm, a = self._lattice(t, x)
        if zeta.size == 0:
            return out
        nu = 3.0 + a.max()
        npan = max(1, math.ceil((self.s_hi - self.s_lo) * nu / (2 * math.pi)))
        edges = np.linspace(self.s_lo, self.s_hi, npan + 1)
        xg, wg = _GL16
        a_minus = np.zeros(zeta.size, complex)   # int e^{-isa} g
        a_plus = np.zeros(zeta.size, complex)    # int e^{+isa} g

        def emit(idx, am, ap):
            tt, xx = t[idx], x[idx]
            et = np.exp(1j * np.outer(tt, a))
            ex = np.exp(1j * np.outer(xx, zeta))
            bracket = (et * am - np.conj(et) * ap) / (2j * a)
            out[idx] = ((ex * bracket) @ cp + (np.conj(ex) * bracket) @ cm) / (2 * L)

        for e0, e1 in zip(edges[:-1], edges[1:]):
            half = 0.5 * (e1 - e0)
            s = e0 + half * (xg + 1.0)
            gs = self.g(s)
            em = np.exp(-1j * np.outer(s, a))
            first = e0 == edges[0]
            inside = np.nonzero(((t > e0) | (first & (t >= e0))) & (t <= e1))[0]
            for sl in _chunks(inside.size, self.chunk):
                idx = inside[sl]
                W = _partial_weights((t[idx] - e0) / half - 1.0) * half
                Wg = W * gs[None, :]
                emit(idx, a_minus[None, :] + Wg @ em, a_plus[None, :] + Wg @ np.conj(em))
            wgs = wg * half * gs
            a_minus += wgs @ em
            a_plus += wgs @ np.conj(em)
        after = np.nonzero(t > self.s_hi)[0]
        for sl in _chunks(after.size, self.chunk):
            idx = after[sl]
            emit(idx, a_minus[None, :], a_plus[None, :])
        return out


def _chunks(n, size):
    for i in range(0, n, size):
        yield slice(i, min(i + size, n))


def cone_cutoff(grid: HyperGrid):
    """chi(y): one on |y| <= y_max - 2, zero on |y| >= y_max - 1."""
    return plateau(grid.y_samples, grid.y_max - 2.0, grid.y_max - 1.0)


def k2_disp(k: int, beta1: Beta1Profile, grid: HyperGrid, rhos, partition=None,
            duhamel: DispersiveDuhamel | None = None, tail_tol: float = 1e-8,
            return_raw: bool = False):
    """K_{2,k}^disp(rho) = h~_disp(rho) P_k [rho^(1/2) chi(y) K~(rho cosh y, rho sinh y)] per rho.

    K~ is sampled on a refined y-grid fine enough that its spectrum is resolved
    (checked on the top decile of modes) before P_k is applied and the result
    truncated back to ``grid``.
    """
    part = partition or TimescalePartition(k)
    rhos = np.atleast_1d(np.asarray(rhos, float))
    lo, hi = part.dispersive_support
    if np.any(rhos < 1.0):
        raise DomainError("rho must be >= 1")
    wide = part.dispersive_wide(rhos)
    fields = [Field.zeros(grid, r) for r in rhos]
    raws = [Field.zeros(grid, r) for r in rhos]
    if beta1.is_zero or not np.any(wide > 0):
        return (fields, raws) if return_raw else fields
    duh = duhamel or DispersiveDuhamel(k, beta1, part)
    nyq = np.pi / grid.spacing
    active = np.nonzero(wide > 0)[0]
    need = (duh.zeta_max + 3.0) * rhos[active].max() * 1.25
    factor = 1
    while factor * nyq < need:
        factor *= 2
    while True:
        fine = grid.refined(factor)
        y = fine.y_samples
        reach = np.abs(y) < grid.y_max - 1.0
        chi = cone_cutoff(fine)
        T = np.concatenate([rhos[i] * np.cosh(y[reach]) for i in active])
        X = np.concatenate([rhos[i] * np.sinh(y[reach]) for i in active])
        vals = duh.field(T, X).reshape(active.size, -1)
        ok = True
        raw_fields = {}
        for row, i in enumerate(active):
            v = np.zeros(fine.n_points, complex)
            v[reach] = vals[row]
            v *= np.sqrt(rhos[i]) * chi
            hat = np.fft.fft(v)
            top = np.abs(fine.mode_index) > 0.9 * fine.n_points / 2
            if np.max(np.abs(hat[top]), initial=0) > tail_tol * max(np.max(np.abs(hat)), 1e-300):
                ok = False
                break
            raw_fields[i] = Field(v, rhos[i], fine)
        if ok or factor >= 64:
            break
        factor *= 2
    sym_fine = lp_symbol(fine.wavenumbers, k, "at")
    for i in active:
        proj = apply_multiplier(raw_fields[i], sym_fine) * float(wide[i])
        fields[i] = truncate(proj, grid)
        raws[i] = truncate(raw_fields[i], grid) if factor > 1 else raw_fields[i]
    return (fields, raws) if return_raw else fields


# --- assembly of f_{i,k} ------------------------------------------------------------------

@dataclass
class CubicSymbolSet:
    k: int
    rho: float
    f1: Field
    f2: Field
    f3: Field
    f4: Field
    k1: Field | None = None
    k2_nondisp: Field | None = None
    k2_disp: Field | None = None
    errors_small: tuple | None = None
    errors_smooth: tuple | None = None

    @property
    def fs(self):
        return (self.f1, self.f2, self.f3, self.f4)

    def recombined(self):
        """(F1, F2, G1, G2) from the f_i."""
        f1, f2, f3, f4 = self.fs
        return f1 * 3 + f3, f1 - f3, f2 + f4 * 3, f2 - f4

    @property
    def is_zero(self) -> bool:
        return all(linf_norm(f) == 0 for f in self.fs)


def _re(f: Field) -> Field:
    return f.with_values((f.values + np.conj(f.values)) / 2)


def _im(f: Field) -> Field:
    return f.with_values((f.values - np.conj(f.values)) / 2j)


def assemble_f(k1: Field, k2: Field, rho: float, k: int | None = None) -> CubicSymbolSet:
    """Undo the gauges and solve the 2x2 systems for f_1..f_4.

    F1 + i G1 = e^{-i rho} K1,  F2 + i G2 = e^{-3i rho} K2,
    f1 = (F1 + F2)/4, f3 = (F1 - 3F2)/4, f2 = (G1 + 3G2)/4, f4 = (G1 - G2)/4.
    """
    k1.check_compatible(k2)
    d1 = k1 * np.exp(-1j * rho)
    d2 = k2 * np.exp(-3j * rho)
    F1, G1, F2, G2 = _re(d1), _im(d1), _re(d2), _im(d2)
    return CubicSymbolSet(
        k=k if k is not None else -1, rho=rho,
        f1=(F1 + F2) * 0.25, f3=(F1 - F2 * 3) * 0.25,
        f2=(G1 + G2 * 3) * 0.25, f4=(G1 - G2) * 0.25,
        k1=k1, k2_nondisp=None, k2_disp=None,
    )


class CubicSymbols:
    """Constructs and caches the dyadic symbols for one beta_1 profile."""

    def __init__(self, beta1: Beta1Profile, transition_width: float = 1.0, band: float = 5.0):
        self.beta1 = beta1
        self.transition_width = transition_width
        self.band = band
        self._duh = {}

    def partition(self, k) -> TimescalePartition:
        return TimescalePartition(k, self.transition_width)

    def duhamel(self, k) -> DispersiveDuhamel:
        if k not in self._duh:
            self._duh[k] = DispersiveDuhamel(k, self.beta1, self.partition(k), band=self.band)
        return self._duh[k]

    def raw(self, k, rhos, grid: HyperGrid):
        """(K1, K2_nondisp, K2_disp) at each rho."""
        part = self.partition(k)
        rhos = np.atleast_1d(np.asarray(rhos, float))
        disp = k2_disp(k, self.beta1, grid, rhos, part, self.duhamel(k))
        return [(k1_symbol(k, r, self.beta1, grid, part), k2_nondisp(k, r, self.beta1, grid, part), d)
                for r, d in zip(rhos, disp)]

    def sets(self, k, rhos, grid: HyperGrid):
        out = []
        for (K1, K2n, K2d), r in zip(self.raw(k, rhos, grid), np.atleast_1d(rhos)):
            s = assemble_f(K1, K2n + K2d, float(r), k)
            s.k2_nondisp, s.k2_disp = K2n, K2d
            out.append(s)
        return out

    def active_ks(self, rho_min, rho_max, grid: HyperGrid):
        """k in [1, ceil(log2 Nyquist)] whose symbols do not vanish on [rho_min, rho_max]."""
        kmax = math.ceil(math.log2(np.pi / grid.spacing))
        return [k for k in range(1, kmax + 1) if float(self.partition(k).smooth(rho_min)) < 1.0]

    def to_dict(self):
        return {"beta1": self.beta1.to_dict(), "transition_width": self.transition_width,
                "band": self.band, "high_offset": 3.0}


# --- resonance residuals -------------------------------------------------------------------

def _fd(values, h, order, npts):
    w = _fd_weights(order, npts)
    c = len(values) // 2
    half = npts // 2
    return sum(w[i] * values[c - half + i] for i in range(npts)) / h**order


def _sy_seminorm(f: Field, M: int = 2) -> float:
    """max_{m <= M} sup |D_y^m f| / rho^(((1-m)/2)_+)."""
    return max(linf_norm(dy(f, m)) / f.rho ** max((1 - m) / 2, 0) for m in range(M + 1))


def gauged_box(values, h, rho, grid, m, npts=5):
    """e^{-i m rho} (Box_H + 1) (e^{i m rho} K) from samples of the gauged K on a rho-stencil.

    Equals Box_H K + 2 i m d_rho K + (1 - m^2) K.
    """
    c = len(values) // 2
    K = values[c]
    d1 = _fd(values, h, 1, npts)
    d2 = _fd(values, h, 2, npts)
    xi = frequencies(grid, rho)
    spatial = np.fft.ifft((xi**2 + 0.25 / rho**2 + 1.0 - m * m) * np.fft.fft(K))
    return d2 + spatial + 2j * m * d1


def resonance_residual(symbols: CubicSymbols, k: int, rho: float, grid: HyperGrid,
                       h: float | None = None, coarse_tol: float = 0.1) -> dict:
    """E_{i,k} = (Box_H+1)K_{i,k} - (3 e^{i rho}, e^{3 i rho}) beta_{1,k} and their split.

    Returns the H^1 norm of the smooth parts, S^{1/2}-type norms of the small
    parts and of the symbols, and a ``coarse`` flag raised when the 3- and
    5-point rho-differences disagree by more than coarse_tol relatively.
    """
    if h is None:
        h = min(0.02 * rho, 0.05)
    if rho - 2 * h < 1.0:
        raise StencilError(f"the five-point stencil at rho={rho:g} reaches below rho = 1")
    part = symbols.partition(k)
    rr = rho + h * np.arange(-2, 3)
    raw = symbols.raw(k, rr, grid)
    g1 = [K1.values * np.exp(-1j * r) for (K1, _, _), r in zip(raw, rr)]
    g2 = [(K2n.values + K2d.values) * np.exp(-3j * r) for (_, K2n, K2d), r in zip(raw, rr)]
    beta = beta1_block(symbols.beta1, k, rho, grid).values
    hs = float(part.smooth(rho))
    box1 = gauged_box(g1, h, rho, grid, 1)
    box2 = gauged_box(g2, h, rho, grid, 3)
    box1c = gauged_box(g1[1:4], h, rho, grid, 1, npts=3)
    box2c = gauged_box(g2[1:4], h, rho, grid, 3, npts=3)
    small1 = Field(box1 - 3 * (1 - hs) * beta, rho, grid)
    small2 = Field(box2 - (1 - hs) * beta, rho, grid)
    smooth1 = Field(-3 * hs * beta, rho, grid)
    smooth2 = Field(-hs * beta, rho, grid)
    scale = max(np.max(np.abs(box1)), np.max(np.abs(box2)), 1e-300)
    disagreement = max(np.max(np.abs(box1 - box1c)), np.max(np.abs(box2 - box2c))) / scale
    small_size = max(linf_norm(small1), linf_norm(small2))
    coarse = bool(disagreement * scale > coarse_tol * max(small_size, 1e-300))
    patch1 = [Field(v, r, grid) for v, r in zip(g1, rr)]
    patch2 = [Field(v, r, grid) for v, r in zip(g2, rr)]
    from .spectral import symbol_seminorm_s12

    k1_derivs = {}
    c = 2
    for n in range(3):
        vals = g1[c] if n == 0 else _fd(g1, h, n, 5 if n else 1)
        for m in range(3 - n):
            k1_derivs[(n, m)] = linf_norm(dy(Field(vals, rho, grid), m))
    return {
        "k": k, "rho": rho, **part.weights(rho),
        "smooth_h1": math.hypot(h1_norm(smooth1), h1_norm(smooth2)),
        "small2_s12": _sy_seminorm(small2 * rho),
        "k2_s12": symbol_seminorm_s12(patch2, 2),
        "small1_sup": {m: rho * linf_norm(dy(small1, m)) for m in range(3)},
        "k1_sup": k1_derivs,
        "k1_linf": linf_norm(patch1[c]),
        "k2_linf": linf_norm(patch2[c]),
        "small_linf": small_size,
        "coarse": coarse,
    }


def envelope_smooth(k, rho):
    return 2.0 ** (-0.5 * abs(k - math.log2(rho)))


def envelope_k2(k, rho):
    return 2.0 ** (-abs(k - math.log2(rho)))


def envelope_k1(k, rho, n, m):
    weight = rho ** max((1 - n - m) / 2, 0)
    lr = math.log2(rho)
    if (n, m) == (0, 1):
        return weight * 2.0 ** (-max(k - lr, 0.0))
    return weight * (2.0 ** (-abs(k - 0.5 * lr)) + 2.0 ** (-abs(k - lr)))


@dataclass
class EnvelopeFit:
    constant: float
    max_ratio: float
    points_used: int
    points_total: int

    @property
    def spread(self) -> float:
        return self.max_ratio / self.constant if self.constant > 0 else float("inf")

    def within(self, factor=4.0) -> bool:
        return self.points_used > 0 and self.spread <= factor


def envelope_fit(data, envelope, active: float = 1e-2) -> EnvelopeFit:
    """Fit data <= C * envelope with C the geometric mean of data/envelope.

    Only points with ratio above ``active`` times the largest ratio enter the
    mean (points far below the envelope are consistent with an upper bound
    and carry no shape information).  The fit holds within a factor F when
    every ratio is at most F * C.
    """
    data = np.asarray(data, float)
    env = np.asarray(envelope, float)
    r = data / env
    r = r[np.isfinite(r) & (r > 0)]
    if r.size == 0:
        return EnvelopeFit(0.0, 0.0, 0, data.size)
    sel = r >= active * r.max()
    C = float(np.exp(np.mean(np.log(r[sel]))))
    return EnvelopeFit(C, float(r.max()), int(sel.sum()), int(data.size))


# --- N_k and the cubic remainder -------------------------------------------------------------

def _mul(*fs):
    out = fs[0].values
    for f in fs[1:]:
        out = out * f.values
    return fs[0].with_values(out)


def _monomials(w, wd):
    return (_mul(w, w, w), _mul(w, w, wd), _mul(w, wd, wd), _mul(wd, wd, wd))


def n_k(sset: CubicSymbolSet, w: Field, wd: Field) -> Field:
    """rho^-1 sum f_i m_i with w = u_{<k}, wd = u_dot_{<k} (pointwise on the given grid)."""
    mons = _monomials(w, wd)
    out = sum((_mul(f, m) for f, m in zip(sset.fs, mons)), Field.zeros(w.grid, w.rho))
    return out * (1.0 / w.rho)


def refine_factor_for(k: int, grid: HyperGrid) -> int:
    """Grid refinement that keeps f_{i,k} times cubic monomials of P_{<k} u alias-free."""
    need = 5.0 * 2.0**k * 1.05
    nyq = np.pi / grid.spacing
    f = 1
    while f * nyq < need:
        f *= 2
    return f


def n_cubic(u: Field, udot: Field, symbol_sets, rho: float | None = None) -> Field:
    """sum_k N_k, with products formed on a grid fine enough to be exact, then truncated."""
    total = Field.zeros(u.grid, u.rho)
    for s in symbol_sets:
        if s.is_zero:
            continue
        R = refine_factor_for(s.k, u.grid)
        uf, udf = refine(u, R), refine(udot, R)
        w, wd = _lowpass(uf, s.k), _lowpass(udf, s.k)
        fs = CubicSymbolSet(s.k, s.rho, *[refine(f, R) for f in s.fs])
        total = total + truncate(n_k(fs, w, wd), u.grid)
    return total


def _lowpass(u: Field, k) -> Field:
    return apply_multiplier(u, lp_symbol(u.grid.wavenumbers, k, "below"))


def _box_spatial(f: Field) -> Field:
    xi = frequencies(f.grid, f.rho)
    return apply_multiplier(f, xi**2 + 0.25 / f.rho**2)


@dataclass
class RemainderSample:
    rho: float
    k: int
    h: float
    direct: Field
    assembled: Field

    @property
    def difference(self) -> float:
        return linf_norm(self.direct - self.assembled)

    @property
    def scale(self) -> float:
        return linf_norm(self.direct)


def cubic_remainder_pair(traj: Trajectory, symbols: CubicSymbols, k: int, rho: float,
                         h: float = 0.02, substeps: int = 8) -> RemainderSample:
    """R_k computed (a) directly and (b) from the assembled error terms.

    (a) (Box_H+1) N_k - rho^-1 beta_{1,k} w^3 with d_rho^2 N_k from a three-point
        stencil of solution states.
    (b) R^coef + (-2 rho^-1 d_rho N_k + R1 + R2 + R3 + R4), with rho-derivatives
        of the f_i from a three-point stencil of symbols and those of w from the
        equation.
    """
    grid = traj.grid
    R = refine_factor_for(k, grid)
    fine = grid.refined(R)
    model = traj.model
    states = traj.stencil(rho, h, substeps=substeps)
    rr = [s.rho for s in states]
    sets = symbols.sets(k, rr, fine)
    W = [_lowpass(refine(s.u, R), k) for s in states]
    WD = [_lowpass(refine(s.udot, R), k) for s in states]
    beta = beta1_block(symbols.beta1, k, rho, fine)

    # (a) direct
    Nv = [n_k(sset, w, wd).values for sset, w, wd in zip(sets, W, WD)]
    N0 = Field(Nv[1], rho, fine)
    box_n = Field((Nv[2] - 2 * Nv[1] + Nv[0]) / h**2, rho, fine) + _box_spatial(N0) + N0
    w, wd = W[1], WD[1]
    direct = box_n - _mul(beta, w, w, w) * (1.0 / rho)

    # (b) assembled
    mid = states[1]
    udd = mid.u.with_values(model.accel(mid.u.values, mid.udot.values, rho))
    uddd = mid.u.with_values(model.jerk(mid.u.values, mid.udot.values, rho))
    wdd = _lowpass(refine(udd, R), k)
    wddd = _lowpass(refine(uddd, R), k)
    f = sets[1].fs
    fd = [Field((sets[2].fs[i].values - sets[0].fs[i].values) / (2 * h), rho, fine) for i in range(4)]
    fdd = [Field((sets[2].fs[i].values - 2 * f[i].values + sets[0].fs[i].values) / h**2, rho, fine)
           for i in range(4)]
    box = [fdd[i] + _box_spatial(f[i]) for i in range(4)]
    f1, f2, f3, f4 = f
    d1, d2, d3, d4 = fd
    E1 = box[0] - f1 * 2 - d2 * 2 + f3 * 2 - beta
    E2 = box[1] - f2 * 6 + d1 * 6 - d3 * 4 + f4 * 6
    E3 = box[2] - f3 * 6 + f1 * 6 + d2 * 4 - d4 * 6
    E4 = box[3] - f4 * 2 + f2 * 2 + d3 * 2
    mons = _monomials(w, wd)
    r_coef = sum((_mul(E, m) for E, m in zip((E1, E2, E3, E4), mons)),
                 Field.zeros(fine, rho)) * (1.0 / rho)
    dmons = (_mul(w, w, wd) * 3,
             _mul(w, wd, wd) * 2 + _mul(w, w, wdd),
             _mul(wd, wd, wd) + _mul(w, wd, wdd) * 2,
             _mul(wd, wd, wdd) * 3)
    Nmid = n_k(sets[1], w, wd)
    dN = Nmid * (-1.0 / rho) + sum((_mul(d, m) + _mul(fi, dm) for d, m, fi, dm in
                                    zip(fd, mons, f, dmons)), Field.zeros(fine, rho)) * (1.0 / rho)
    Q = wdd + w
    Qd = wddd + wd
    R1 = _mul(f1 * 3 * 1.0, w, w) + _mul(f3, wd, wd) * 5 - _mul(f3, w, w) * 4 + _mul(f2, w, wd) * 6 \
        - _mul(f4, w, wd) * 12 + _mul(d3, w, wd) * 4 + _mul(d2, w, w) * 2 + _mul(d4, wd, wd) * 6
    R1 = _mul(R1, Q) * (1.0 / rho)
    R2 = _mul(f3 * 2 * 1.0, w) + _mul(f4, wd) * 6
    R2 = _mul(R2, Q, Q) + _mul(_mul(f3, w, wd) * 2 + _mul(f2, w, w) + _mul(f4, wd, wd) * 3, Qd)
    R2 = R2 * (1.0 / rho)
    R3 = sum((_mul(dy(fi), dy(m)) for fi, m in zip(f, mons)), Field.zeros(fine, rho)) * (2.0 / rho)
    R4 = sum((_mul(fi, dy(m, 2)) for fi, m in zip(f, mons)), Field.zeros(fine, rho)) * (1.0 / rho)
    assembled = r_coef - dN * (2.0 / rho) + R1 + R2 + R3 + R4
    return RemainderSample(rho, k, h, truncate(direct, grid), truncate(assembled, grid))


def cubic_remainder_check(traj: Trajectory, symbols: CubicSymbols, k: int, rho: float,
                          h: float = 0.04, slack: float = 10.0, floor: float = 1e-12) -> dict:
    """Direct-vs-assembled agreement at steps h and h/2.

    Raises CheckFailure when the finer difference exceeds ``slack`` times the
    second-order prediction (coarse difference / 4) plus an absolute floor
    relative to the size of R_k.
    """
    coarse = cubic_remainder_pair(traj, symbols, k, rho, h)
    fine = cubic_remainder_pair(traj, symbols, k, rho, h / 2)
    scale = max(fine.scale, 1e-300)
    predicted = coarse.difference / 4.0
    ratio = coarse.difference / fine.difference if fine.difference > 0 else float("inf")
    if fine.difference > slack * predicted + floor * scale:
        raise CheckFailure(f"cubic remainder routes disagree at k={k}, rho={rho:g}: "
                           f"{fine.difference:.3e} vs predicted {predicted:.3e}")
    return {"k": k, "rho": rho, "h": h, "diff_h": coarse.difference, "diff_h2": fine.difference,
            "ratio": ratio, "rk_linf": fine.scale,
            "relative_diff": fine.difference / scale}


def cubic_remainder(traj: Trajectory, symbols: CubicSymbols, rhos, h: float = 0.02,
                    delta: float = 0.05, ks=None):
    """N-norm of sum_k R_k (direct route) and sup|R_k| per block at each rho."""
    rows = []
    for rho in rhos:
        ks_here = ks if ks is not None else symbols.active_ks(rho, rho, traj.grid)
        total = Field.zeros(traj.grid, rho)
        per_k = {}
        for k in ks_here:
            pair = cubic_remainder_pair(traj, symbols, k, rho, h)
            per_k[k] = pair.scale
            total = total + pair.direct
        rows.append({"rho": float(rho), "sum_rk_N_norm": norm_n(total, delta).n_norm,
                     "per_k_linf": per_k})
    return rows


# --- reports -----------------------------------------------------------------------------------

CSV_FIELDS = ["k", "rho", "high", "dispersive", "elliptic", "smooth", "k1_linf", "k2_linf",
              "smooth_h1", "small_linf", "rk_N_norm"]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({key: (f"{r[key]:.12e}" if isinstance(r.get(key), float) else r.get(key, ""))
                    for key in CSV_FIELDS})
    return buf.getvalue()


def sidecar_json(symbols: CubicSymbols, ks) -> str:
    return json.dumps({"schema": 1, "symbols": symbols.to_dict(),
                       "partitions": [symbols.partition(k).to_dict() for k in ks]},
                      indent=1, sort_keys=True)

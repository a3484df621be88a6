"""Hyperboloidal coordinates, periodic y-grids, fields and coefficient sampling.

Inside the forward light cone we use t = rho cosh(y), x = rho sinh(y).  The
y-direction is discretized on a uniform periodic grid of width 2 * y_max.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import ConfigError, DomainError, GridMismatchError


class NearConeWarning(UserWarning):
    """A point lies so close to the light cone that rho is below the floor."""


@dataclass(frozen=True)
class HyperGrid:
    """Uniform periodic grid on [-y_max, y_max)."""

    y_max: float = 6.0
    n_points: int = 1024

    def __post_init__(self):
        n = int(self.n_points)
        if n < 2 or n & (n - 1):
            raise ConfigError(f"n_points must be a power of two, got {self.n_points}")
        if not self.y_max > 0:
            raise ConfigError("y_max must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.y_max / self.n_points

    @cached_property
    def y_samples(self) -> np.ndarray:
        return -self.y_max + self.spacing * np.arange(self.n_points)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers of d/dy in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer mode numbers j in FFT order."""
        return np.rint(np.fft.fftfreq(self.n_points) * self.n_points).astype(np.int64)

    def refined(self, factor: int) -> "HyperGrid":
        return HyperGrid(self.y_max, self.n_points * int(factor))

    def to_dict(self):
        return {"y_max": self.y_max, "n_points": self.n_points}


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a function of y on a grid, stamped with the time rho."""

    values: np.ndarray
    rho: float
    grid: HyperGrid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.grid.n_points,):
            raise GridMismatchError(
                f"field has shape {vals.shape}, grid expects ({self.grid.n_points},)"
            )
        if not self.rho >= 1.0:
            raise DomainError(f"fields are defined for rho >= 1, got {self.rho}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid, rho):
        return cls(np.zeros(grid.n_points, complex), rho, grid)

    @classmethod
    def from_function(cls, func, grid, rho):
        return cls(func(grid.y_samples), rho, grid)

    def with_values(self, values) -> "Field":
        return Field(values, self.rho, self.grid)

    def restamp(self, rho) -> "Field":
        """Same samples at a different time."""
        return Field(self.values, rho, self.grid)

    def check_compatible(self, other: "Field", same_rho=True):
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")
        if same_rho and not math.isclose(other.rho, self.rho, rel_tol=0, abs_tol=1e-12):
            raise GridMismatchError(f"time stamps differ: {self.rho} vs {other.rho}")

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def _coerce(self, other):
        if isinstance(other, Field):
            self.check_compatible(other)
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._coerce(other))

    def __rsub__(self, other):
        return self.with_values(self._coerce(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.with_values(self.values / self._coerce(other))

    def __neg__(self):
        return self.with_values(-self.values)

    def conj(self):
        return self.with_values(np.conj(self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


# --- coefficient profiles -------------------------------------------------

PROFILES = ("gaussian", "sech2", "gaussian_cosine")


@dataclass(frozen=True)
class Beta1Profile:
    """Named analytic profile for the Schwartz perturbation beta_1(x).

    gaussian:         A exp(-z^2)
    sech2:            A sech(z)^2
    gaussian_cosine:  A exp(-z^2) cos(frequency * (x - center))
    with z = (x - center) / width.
    """

    profile: str = "gaussian"
    amplitude: float = 1.0
    width: float = 1.0
    center: float = 0.0
    frequency: float = 3.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown beta1 profile {self.profile!r}; choose from {PROFILES}")
        if not (np.isfinite(self.amplitude) and self.width > 0):
            raise ConfigError("beta1 needs a finite amplitude and positive width")

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def derivative(self, x, order: int = 0):
        """Closed-form derivative of order 0, 1 or 2."""
        x = np.asarray(x, dtype=float)
        w = self.width
        z = (x - self.center) / w
        A = self.amplitude
        if self.profile == "gaussian":
            g = A * np.exp(-z * z)
            if order == 0:
                return g
            if order == 1:
                return -2.0 * z / w * g
            if order == 2:
                return (4.0 * z * z - 2.0) / w**2 * g
        elif self.profile == "sech2":
            sech2 = 1.0 / np.cosh(np.clip(z, -350, 350)) ** 2
            th = np.tanh(z)
            if order == 0:
                return A * sech2
            if order == 1:
                return -2.0 / w * th * A * sech2
            if order == 2:
                return A * sech2 * (4.0 * th * th - 2.0 * sech2) / w**2
        else:
            e = np.exp(-z * z)
            e1 = -2.0 * z / w * e
            e2 = (4.0 * z * z - 2.0) / w**2 * e
            nu = self.frequency
            c = np.cos(nu * (x - self.center))
            s = np.sin(nu * (x - self.center))
            if order == 0:
                return A * e * c
            if order == 1:
                return A * (e1 * c - nu * e * s)
            if order == 2:
                return A * (e2 * c - 2.0 * nu * e1 * s - nu * nu * e * c)
        raise ValueError("derivative order must be 0, 1 or 2")

    def __call__(self, x):
        return self.derivative(x, 0)

    def fourier(self, xi):
        """Transform  int exp(-i xi x) beta_1(x) dx  in closed form."""
        xi = np.asarray(xi, dtype=float)
        w = self.width
        A = self.amplitude
        shift = np.exp(-1j * xi * self.center)
        if self.profile == "gaussian":
            core = A * w * np.sqrt(np.pi) * np.exp(-(w * xi) ** 2 / 4.0)
        elif self.profile == "sech2":
            a = np.abs(np.pi * w * xi / 2.0)
            with np.errstate(over="ignore", invalid="ignore"):
                ratio = np.where(a < 1e-8, 1.0, 2.0 * a * np.exp(-a) / (-np.expm1(-2.0 * a)))
            core = A * 2.0 * w * ratio
        else:
            nu = self.frequency
            core = 0.5 * A * w * np.sqrt(np.pi) * (
                np.exp(-(w * (xi - nu)) ** 2 / 4.0) + np.exp(-(w * (xi + nu)) ** 2 / 4.0)
            )
        return core * shift

    def to_dict(self):
        d = {"profile": self.profile, "amplitude": self.amplitude,
             "width": self.width, "center": self.center}
        if self.profile == "gaussian_cosine":
            d["frequency"] = self.frequency
        return d


@dataclass(frozen=True)
class CoefficientSpec:
    """Couplings alpha0 (quadratic), beta0 (constant cubic) and beta1(x)."""

    alpha0: float = 0.0
    beta0: float = 0.0
    beta1: Beta1Profile = field(default_factory=lambda: Beta1Profile(amplitude=0.0))

    def beta(self, x):
        """Full cubic coefficient beta0 + beta1(x)."""
        return self.beta0 + self.beta1(x)

    def to_dict(self):
        return {"alpha0": self.alpha0, "beta0": self.beta0, "beta1": self.beta1.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        b1 = d.get("beta1") or {"amplitude": 0.0}
        return cls(float(d.get("alpha0", 0.0)), float(d.get("beta0", 0.0)),
                   Beta1Profile(**{k: (v if k == "profile" else float(v)) for k, v in b1.items()}))

    @classmethod
    def from_json(cls, text: str):
        return cls.from_dict(json.loads(text))

    def without_beta1(self):
        return replace(self, beta1=replace(self.beta1, amplitude=0.0))


# --- coordinate maps ------------------------------------------------------

def to_cartesian(rho, y):
    """(rho, y) -> (t, x) = (rho cosh y, rho sinh y)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("rho must be positive")
    y = np.asarray(y, dtype=float)
    t, x = rho * np.cosh(y), rho * np.sinh(y)
    if t.ndim == 0:
        return float(t), float(x)
    return t, x


def from_cartesian(t, x, rho_floor=None):
    """(t, x) -> (rho, y) for points strictly inside the forward cone.

    Warns with NearConeWarning when rho falls below ``rho_floor``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(t <= np.abs(x)):
        raise DomainError("point is not strictly inside the forward light cone")
    # (t - x)(t + x) avoids cancellation near the cone
    rho = np.sqrt((t - x) * (t + x))
    y = np.arctanh(x / t)
    if rho_floor is not None and np.any(rho < rho_floor):
        warnings.warn(f"rho = {np.min(rho):.3g} is below the floor {rho_floor}", NearConeWarning,
                      stacklevel=2)
    if rho.ndim == 0:
        return float(rho), float(y)
    return rho, y


# --- coefficient sampling -------------------------------------------------

def sample_coefficient(coeffs: CoefficientSpec, rho: float, grid: HyperGrid, mode: str = "exact"):
    """Samples of beta_1 along the slice: beta_1(rho sinh y) or beta_1(rho y)."""
    if rho < 1:
        raise DomainError("sample_coefficient needs rho >= 1")
    y = grid.y_samples
    if mode == "exact":
        arg = rho * np.sinh(y)
    elif mode == "flat":
        arg = rho * y
    else:
        raise ConfigError(f"mode must be 'exact' or 'flat', got {mode!r}")
    return Field(coeffs.beta1(arg), rho, grid)


def _gap(profile: Beta1Profile, rho, y, m):
    """(rho^-1 d/dy)^m [beta1(rho y) - beta1(rho sinh y)] in closed form."""
    sh, ch = np.sinh(y), np.cosh(y)
    if m == 0:
        return profile(rho * y) - profile(rho * sh)
    if m == 1:
        return profile.derivative(rho * y, 1) - ch * profile.derivative(rho * sh, 1)
    if m == 2:
        return (profile.derivative(rho * y, 2)
                - ch * ch * profile.derivative(rho * sh, 2)
                - sh / rho * profile.derivative(rho * sh, 1))
    raise ValueError("m must be 0, 1 or 2")


def coefficient_gap_norm(coeffs: CoefficientSpec, rho: float, grid: HyperGrid, p="infinity",
                         n: int = 0, m: int = 0, rel_step: float = 1e-3) -> float:
    """L^p_y norm of d_rho^n (rho^-1 d_y)^m [beta1(rho y) - beta1(rho sinh y)].

    y-derivatives are taken in closed form; rho-derivatives by second-order
    centered differences with step rel_step * rho.
    """
    if n not in (0, 1, 2) or m not in (0, 1, 2):
        raise ValueError("n and m must lie in {0, 1, 2}")
    y = grid.y_samples
    prof = coeffs.beta1
    if n == 0:
        vals = _gap(prof, rho, y, m)
    else:
        h = rel_step * rho
        lo, mid, hi = (_gap(prof, r, y, m) for r in (rho - h, rho, rho + h))
        vals = (hi - lo) / (2 * h) if n == 1 else (hi - 2 * mid + lo) / h**2
    if p in ("infinity", "inf", np.inf):
        return float(np.max(np.abs(vals)))
    if p == 2:
        return float(np.sqrt(np.sum(np.abs(vals) ** 2) * grid.spacing))
    raise ValueError("p must be 2 or 'infinity'")

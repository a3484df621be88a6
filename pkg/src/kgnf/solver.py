"""Time integration of the nonlinear Klein-Gordon equation in both charts.

Hyperboloidal chart, with u = rho^(1/2) phi:

    u_rhorho = rho^-2 u_yy - (1 + rho^-2 / 4) u + rho^(-1/2) alpha0 u^2 + rho^-1 beta(rho sinh y) u^3

Cartesian chart:

    phi_tt = phi_xx - phi + alpha0 phi^2 + beta(x) phi^3

Both are advanced with classical RK4 on the first-order system.  Quadratic
products are dealiased on a 2x padded grid, cubic ones on a 4x grid.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BlowUpError, ConfigError, DomainExitError, GridMismatchError, StencilError
from .hypergrid import CoefficientSpec, Field, HyperGrid
from .spectral import _pad_spectrum, _truncate_spectrum, lp_symbol

log = logging.getLogger(__name__)


# --- models ------------------------------------------------------------------

class _Dealiaser:
    """Padded-grid products for a periodic grid of n points."""

    def __init__(self, n):
        self.n = n

    def up(self, hat, factor):
        return np.fft.ifft(_pad_spectrum(hat, self.n * factor)) * factor

    def down(self, vals, factor):
        return np.fft.ifft(_truncate_spectrum(np.fft.fft(vals), self.n)) / factor


class HyperbolicModel:
    """Right-hand side of the hyperboloidal equation and its rho-derivatives."""

    def __init__(self, coefficients: CoefficientSpec, grid: HyperGrid):
        self.coefficients = coefficients
        self.grid = grid
        self.k2 = grid.wavenumbers**2
        self._d = _Dealiaser(grid.n_points)
        fine = grid.refined(4)
        self._sinh4 = np.sinh(fine.y_samples)
        self.linear_only = coefficients.alpha0 == 0 and coefficients.beta0 == 0 \
            and coefficients.beta1.is_zero

    def _beta_fine(self, rho):
        return self.coefficients.beta(rho * self._sinh4)

    def _dbeta_fine(self, rho):
        # d/drho beta1(rho sinh y) = sinh y * beta1'(rho sinh y)
        return self._sinh4 * self.coefficients.beta1.derivative(rho * self._sinh4, 1)

    def linear(self, u, rho):
        """rho^-2 u_yy - (1 + rho^-2/4) u."""
        return np.fft.ifft(-(self.k2 / rho**2 + 1.0 + 0.25 / rho**2) * np.fft.fft(u))

    def nonlinear(self, u, rho):
        """G = rho^(-1/2) alpha0 u^2 + rho^-1 beta(rho sinh y) u^3, dealiased."""
        if self.linear_only:
            return np.zeros_like(u)
        a0 = self.coefficients.alpha0
        hat = np.fft.fft(u)
        out = np.zeros(self.grid.n_points, complex)
        if a0:
            u2 = self._d.up(hat, 2)
            out += rho**-0.5 * a0 * self._d.down(u2 * u2, 2)
        u4 = self._d.up(hat, 4)
        beta = self._beta_fine(rho)
        if np.any(beta):
            out += self._d.down(beta * u4**3, 4) / rho
        return out

    def nonlinear_drho(self, u, ud, rho):
        """rho-derivative of G along a solution with velocity ud."""
        if self.linear_only:
            return np.zeros_like(u)
        a0 = self.coefficients.alpha0
        su, sd = np.fft.fft(u), np.fft.fft(ud)
        out = np.zeros(self.grid.n_points, complex)
        if a0:
            u2, d2 = self._d.up(su, 2), self._d.up(sd, 2)
            out += a0 * self._d.down(-0.5 * rho**-1.5 * u2 * u2 + 2 * rho**-0.5 * u2 * d2, 2)
        u4, d4 = self._d.up(su, 4), self._d.up(sd, 4)
        beta, dbeta = self._beta_fine(rho), self._dbeta_fine(rho)
        out += self._d.down(-beta * u4**3 / rho**2 + dbeta * u4**3 / rho
                            + 3 * beta * u4**2 * d4 / rho, 4)
        return out

    def accel(self, u, ud, rho):
        return self.linear(u, rho) + self.nonlinear(u, rho)

    def jerk(self, u, ud, rho):
        """Third rho-derivative of u from the equation (no differencing)."""
        lin_drho = np.fft.ifft((2 * self.k2 + 0.5) / rho**3 * np.fft.fft(u))
        return lin_drho + self.linear(ud, rho) + self.nonlinear_drho(u, ud, rho)


def _rk4(accel, u, ud, rho, h):
    k1u, k1v = ud, accel(u, ud, rho)
    k2u, k2v = ud + 0.5 * h * k1v, accel(u + 0.5 * h * k1u, ud + 0.5 * h * k1v, rho + 0.5 * h)
    k3u, k3v = ud + 0.5 * h * k2v, accel(u + 0.5 * h * k2u, ud + 0.5 * h * k2v, rho + 0.5 * h)
    k4u, k4v = ud + h * k3v, accel(u + h * k3u, ud + h * k3v, rho + h)
    return (u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u),
            ud + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


# --- states and trajectories -------------------------------------------------------

@dataclass(frozen=True)
class State:
    """The pair (u, u_dot) at a common time."""

    u: Field
    udot: Field

    def __post_init__(self):
        self.u.check_compatible(self.udot)

    @property
    def rho(self):
        return self.u.rho

    @property
    def grid(self):
        return self.u.grid


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.5
    max_step: float = 0.1
    store_fraction: float = 0.02
    dyadic_checkpoints: bool = True
    blowup_factor: float = 1e3

    def step(self, rho, grid):
        return self.cfl * min(rho * grid.spacing, self.max_step)

    def to_dict(self):
        return dict(cfl=self.cfl, max_step=self.max_step, store_fraction=self.store_fraction,
                    dyadic_checkpoints=self.dyadic_checkpoints, blowup_factor=self.blowup_factor)


@dataclass
class Trajectory:
    """Stored snapshots of (u, u_dot) with the model needed to regenerate stencils."""

    grid: HyperGrid
    coefficients: CoefficientSpec
    rhos: list = field(default_factory=list)
    us: list = field(default_factory=list)
    udots: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rhos)

    def append(self, rho, u, ud):
        self.rhos.append(float(rho))
        self.us.append(np.array(u, complex))
        self.udots.append(np.array(ud, complex))

    def state(self, i) -> State:
        return State(Field(self.us[i], self.rhos[i], self.grid),
                     Field(self.udots[i], self.rhos[i], self.grid))

    def index_near(self, rho) -> int:
        return int(np.argmin(np.abs(np.asarray(self.rhos) - rho)))

    @property
    def model(self) -> HyperbolicModel:
        return HyperbolicModel(self.coefficients, self.grid)

    def state_at(self, rho, max_step=1e-2) -> State:
        """State at an arbitrary rho, integrated from the nearest stored snapshot."""
        i = self.index_near(rho)
        return advance(self.model, self.state(i), rho, max_step)

    def stencil(self, rho, h, substeps=8, npts=3):
        """States at rho + j h for j = -(npts//2) .. npts//2, regenerated by fine RK4."""
        if npts % 2 == 0 or npts < 3:
            raise StencilError("stencil needs an odd number >= 3 of points")
        if rho - (npts // 2) * h < self.rhos[0] - 1e-12 or rho + (npts // 2) * h > self.rhos[-1] + 1e-12:
            raise StencilError(f"stencil around rho={rho} leaves the stored range")
        centre = self.state_at(rho, max_step=h / substeps)
        model = self.model
        out = [centre]
        for sign in (-1, 1):
            cur = centre
            for j in range(1, npts // 2 + 1):
                cur = advance(model, cur, rho + sign * j * h, h / substeps)
                out.append(cur) if sign > 0 else out.insert(0, cur)
        return out

    def phi_sup(self, envelope="harmonic"):
        """sup_y |phi| per snapshot, phi = rho^(-1/2) u."""
        rho = np.asarray(self.rhos)
        if envelope == "harmonic":
            amp = [np.max(np.sqrt(np.abs(u) ** 2 + np.abs(v) ** 2)) for u, v in zip(self.us, self.udots)]
        else:
            amp = [np.max(np.abs(u)) for u in self.us]
        return rho, np.asarray(amp) / np.sqrt(rho)

    # persistence ---------------------------------------------------------------

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for i, (rho, u, ud) in enumerate(zip(self.rhos, self.us, self.udots)):
            name = f"state_{i:06d}.bin"
            header = np.array([rho, self.grid.n_points, self.grid.y_max], "<f8")
            blob = np.concatenate([header, u.real, u.imag, ud.real, ud.imag]).astype("<f8")
            (d / name).write_bytes(blob.tobytes())
            files.append({"file": name, "rho": rho})
        manifest = {
            "schema": 1,
            "grid": self.grid.to_dict(),
            "coefficients": self.coefficients.to_dict(),
            "metadata": self.metadata,
            "checkpoints": files,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Trajectory":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        grid = HyperGrid(**manifest["grid"])
        traj = cls(grid, CoefficientSpec.from_dict(manifest["coefficients"]),
                   metadata=manifest.get("metadata", {}))
        n = grid.n_points
        for entry in manifest["checkpoints"]:
            blob = np.frombuffer((d / entry["file"]).read_bytes(), "<f8")
            rho, npts, ymax = blob[:3]
            if int(npts) != n or ymax != grid.y_max:
                raise ConfigError(f"{entry['file']} does not match the manifest grid")
            body = blob[3:].reshape(4, n)
            traj.append(rho, body[0] + 1j * body[1], body[2] + 1j * body[3])
        return traj


def advance(model: HyperbolicModel, state: State, rho_target: float, max_step: float) -> State:
    """Integrate from state.rho to rho_target (either direction) with uniform RK4 steps."""
    span = rho_target - state.rho
    if span == 0:
        return state
    nsteps = max(1, math.ceil(abs(span) / max_step - 1e-9))
    h = span / nsteps
    u, ud, rho = state.u.values, state.udot.values, state.rho
    for _ in range(nsteps):
        u, ud = _rk4(model.accel, u, ud, rho, h)
        rho += h
    g = state.grid
    return State(Field(u, rho_target, g), Field(ud, rho_target, g))


def _config_hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def evolve(initial: State, rho_end: float, coefficients: CoefficientSpec,
           config: SolverConfig = SolverConfig(), progress=None) -> Trajectory:
    """RK4 evolution of the hyperboloidal system from initial.rho to rho_end.

    Steps are cfl * min(rho * spacing, max_step); snapshots are kept every
    ceil(0.02 rho / step) steps and at every power of two.  Raises BlowUpError
    when sup|u| exceeds blowup_factor times its initial value.
    """
    grid = initial.grid
    model = HyperbolicModel(coefficients, grid)
    rho = initial.rho
    if rho_end < rho:
        raise ConfigError("rho_end must not precede the initial time")
    u, ud = initial.u.values.copy(), initial.udot.values.copy()
    amp0 = max(np.max(np.abs(u)), np.max(np.abs(ud)), 1e-300)
    traj = Trajectory(grid, coefficients)
    traj.append(rho, u, ud)
    next_dyadic = 2.0 ** (math.floor(math.log2(rho)) + 1)
    since_store = 0
    nsteps = 0
    edge = np.abs(grid.y_samples) > 0.9 * grid.y_max
    edge_max = 0.0
    while rho < rho_end - 1e-12:
        h = config.step(rho, grid)
        target = rho_end
        if config.dyadic_checkpoints and next_dyadic < rho_end:
            target = next_dyadic
        hit = rho + h >= target - 1e-12
        if hit:
            h = target - rho
        u, ud = _rk4(model.accel, u, ud, rho, h)
        rho = target if hit else rho + h
        nsteps += 1
        since_store += 1
        amp = np.max(np.abs(u))
        if not np.isfinite(amp) or amp > config.blowup_factor * amp0:
            raise BlowUpError(f"sup|u| = {amp:.3g} exceeds {config.blowup_factor:g} x initial "
                              f"at rho = {rho:.6g}", rho=rho, amplitude=float(amp))
        edge_max = max(edge_max, float(np.max(np.abs(u[edge]))))
        every = math.ceil(rho / config.step(rho, grid) * config.store_fraction)
        is_checkpoint = hit and target == next_dyadic
        if is_checkpoint:
            next_dyadic *= 2.0
        if since_store >= every or is_checkpoint or rho >= rho_end - 1e-12:
            traj.append(rho, u, ud)
            since_store = 0
        if progress is not None and nsteps % 1000 == 0:
            progress(rho)
    traj.metadata = {
        "integrator": "rk4",
        "steps": nsteps,
        "solver": config.to_dict(),
        "edge_max_abs_u": edge_max,
        "config_hash": _config_hash({"grid": grid.to_dict(), "coefficients": coefficients.to_dict(),
                                     "solver": config.to_dict(), "rho0": initial.rho,
                                     "rho_end": rho_end}),
    }
    if edge_max > 1e-6 * amp0:
        log.warning("solution reached |y| > 0.9 y_max with amplitude %.3g", edge_max)
    return traj


# --- initial data ------------------------------------------------------------------

def gaussian_data(grid: HyperGrid, rho0=1.0, amplitude=0.01, width=1.0, center=0.0,
                  wavenumber=0.0, velocity_phase=False) -> State:
    """(Modulated) gaussian in y with zero velocity, or a velocity matching e^{i rho}.

    With velocity_phase=True the data is u = A g(y), u_dot = 0 shifted by a
    quarter period; otherwise u_dot = 0.
    """
    y = grid.y_samples
    prof = amplitude * np.exp(-((y - center) / width) ** 2) * np.cos(wavenumber * (y - center))
    u = Field(prof, rho0, grid)
    ud = Field(np.zeros_like(prof), rho0, grid)
    if velocity_phase:
        u, ud = Field(np.zeros_like(prof), rho0, grid), Field(prof, rho0, grid)
    return State(u, ud)


# --- Cartesian chart ---------------------------------------------------------------

@dataclass(frozen=True)
class XGrid:
    """Periodic x-grid on [-half_width, half_width)."""

    half_width: float = 200.0
    n_points: int = 4096

    @property
    def dx(self):
        return 2 * self.half_width / self.n_points

    @property
    def x(self):
        return -self.half_width + self.dx * np.arange(self.n_points)

    @property
    def wavenumbers(self):
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)


class CartesianModel:
    def __init__(self, coefficients: CoefficientSpec, xgrid: XGrid):
        self.coefficients = coefficients
        self.xgrid = xgrid
        self.k2 = xgrid.wavenumbers**2
        self._d = _Dealiaser(xgrid.n_points)
        fine_x = -xgrid.half_width + xgrid.dx / 4 * np.arange(4 * xgrid.n_points)
        self._beta4 = coefficients.beta(fine_x)
        self.linear_only = coefficients.alpha0 == 0 and not np.any(self._beta4)

    def accel(self, phi, phit, t):
        hat = np.fft.fft(phi)
        out = np.fft.ifft(-(self.k2 + 1.0) * hat)
        if self.linear_only:
            return out
        a0 = self.coefficients.alpha0
        if a0:
            p2 = self._d.up(hat, 2)
            out = out + a0 * self._d.down(p2 * p2, 2)
        p4 = self._d.up(hat, 4)
        return out + self._d.down(self._beta4 * p4**3, 4)


@dataclass
class CartesianTrajectory:
    xgrid: XGrid
    coefficients: CoefficientSpec
    times: list = field(default_factory=list)
    phis: list = field(default_factory=list)
    phits: list = field(default_factory=list)

    def append(self, t, phi, phit):
        self.times.append(float(t))
        self.phis.append(np.array(phi, complex))
        self.phits.append(np.array(phit, complex))

    def energies(self):
        return np.array([energy(p, q, self.coefficients, self.xgrid) for p, q in zip(self.phis, self.phits)])


def evolve_cartesian(phi0, phi1, t_end, coefficients: CoefficientSpec, xgrid: XGrid,
                     t0: float = 2.0, dt: float = 0.01, store_every: int = 10,
                     edge_tol: float | None = 1e-9) -> CartesianTrajectory:
    """RK4 for phi_tt = phi_xx - phi + alpha0 phi^2 + beta(x) phi^3 on a periodic x-grid.

    Raises DomainExitError when |phi| exceeds edge_tol * sup|phi0| on the outer
    5% of the domain.  ``edge_tol=None`` skips the test (genuinely periodic data).
    """
    model = CartesianModel(coefficients, xgrid)
    phi = np.asarray(phi0, complex).copy()
    phit = np.asarray(phi1, complex).copy()
    scale = max(np.max(np.abs(phi)), np.max(np.abs(phit)), 1e-300)
    edge = np.abs(xgrid.x) > 0.95 * xgrid.half_width
    traj = CartesianTrajectory(xgrid, coefficients)
    traj.append(t0, phi, phit)
    nsteps = max(1, math.ceil((t_end - t0) / dt - 1e-9))
    h = (t_end - t0) / nsteps
    t = t0
    for i in range(1, nsteps + 1):
        phi, phit = _rk4(model.accel, phi, phit, t, h)
        t = t0 + i * h
        if i % store_every == 0 or i == nsteps:
            if edge_tol is not None and np.max(np.abs(phi[edge])) > edge_tol * scale:
                raise DomainExitError(f"solution reached the x-boundary at t = {t:.4g}")
            traj.append(t, phi, phit)
    return traj


def energy(phi, phi_t, coefficients: CoefficientSpec, xgrid: XGrid) -> float:
    """E = 1/2 int (phi_t^2 + phi_x^2 + phi^2 - 2/3 alpha0 phi^3 - 1/2 beta phi^4) dx."""
    phi = np.real(phi)
    phi_t = np.real(phi_t)
    phi_x = np.real(np.fft.ifft(1j * xgrid.wavenumbers * np.fft.fft(phi)))
    beta = coefficients.beta(xgrid.x)
    dens = (phi_t**2 + phi_x**2 + phi**2 - (2.0 / 3.0) * coefficients.alpha0 * phi**3
            - 0.5 * beta * phi**4)
    return float(0.5 * np.sum(dens) * xgrid.dx)


def _hermite(t, t0, t1, f0, d0, f1, d1):
    h = t1 - t0
    s = (t - t0) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1


def _fourier_eval(values, xgrid: XGrid, points):
    """Trigonometric interpolant of periodic samples at arbitrary points."""
    hat = np.fft.fft(values) / xgrid.n_points
    k = xgrid.wavenumbers
    return np.exp(1j * np.outer(points + xgrid.half_width, k)) @ hat


def cartesian_to_hyperboloid(traj: CartesianTrajectory, rho: float, grid: HyperGrid,
                             y_window: float | None = None) -> State:
    """Pull (u, u_dot) on the hyperboloid rho back from a Cartesian trajectory.

    Time interpolation is cubic Hermite with phi_tt from the equation, space
    interpolation is trigonometric.  Points outside the stored time range, or
    with |y| > y_window, are set to zero.
    """
    model = CartesianModel(traj.coefficients, traj.xgrid)
    y = grid.y_samples
    t_pts, x_pts = rho * np.cosh(y), rho * np.sinh(y)
    times = np.asarray(traj.times)
    u = np.zeros(grid.n_points, complex)
    ud = np.zeros(grid.n_points, complex)
    ok = (t_pts >= times[0]) & (t_pts <= times[-1])
    if y_window is not None:
        ok &= np.abs(y) <= y_window
    k = traj.xgrid.wavenumbers
    for j in np.nonzero(ok)[0]:
        i = min(max(np.searchsorted(times, t_pts[j]) - 1, 0), len(times) - 2)
        p0, p1 = traj.phis[i], traj.phis[i + 1]
        q0, q1 = traj.phits[i], traj.phits[i + 1]
        a0 = model.accel(p0, q0, times[i])
        a1 = model.accel(p1, q1, times[i + 1])
        phi_line = _hermite(t_pts[j], times[i], times[i + 1], p0, q0, p1, q1)
        phit_line = _hermite(t_pts[j], times[i], times[i + 1], q0, a0, q1, a1)
        phix_line = np.fft.ifft(1j * k * np.fft.fft(phi_line))
        pt = np.array([x_pts[j]])
        phi = _fourier_eval(phi_line, traj.xgrid, pt)[0]
        phit = _fourier_eval(phit_line, traj.xgrid, pt)[0]
        phix = _fourier_eval(phix_line, traj.xgrid, pt)[0]
        phirho = np.cosh(y[j]) * phit + np.sinh(y[j]) * phix
        u[j] = np.sqrt(rho) * phi
        ud[j] = 0.5 / np.sqrt(rho) * phi + np.sqrt(rho) * phirho
    return State(Field(u, rho, grid), Field(ud, rho, grid))


# --- diagnostics ---------------------------------------------------------------------

@dataclass
class FitResult:
    exponent: float
    amplitude: float
    warning: str | None = None


def decay_fit(traj: Trajectory, envelope: str = "harmonic", tail: float = 0.5) -> FitResult:
    """Least-squares power law for sup_y |phi| on the tail of the run (in log rho).

    ``envelope="harmonic"`` uses sup_y sqrt(|u|^2 + |u_dot|^2) rho^(-1/2), the
    amplitude of the asymptotic oscillation; ``"raw"`` uses sup_y |u| rho^(-1/2)
    and falls back to local maxima when the series is not monotone.
    """
    rho, amp = traj.phi_sup(envelope)
    lr = np.log(rho)
    if lr[-1] - lr[0] < math.log(10.0) * 1.0:
        warnings.warn("decay fit over less than a decade", RuntimeWarning, stacklevel=2)
    sel = lr >= lr[0] + (1 - tail) * (lr[-1] - lr[0])
    r, a = rho[sel], amp[sel]
    msg = None
    if envelope == "raw":
        comp = a * np.sqrt(r)
        if np.any(np.diff(comp) > 0) and np.any(np.diff(comp) < 0):
            peaks = np.r_[False, (a[1:-1] >= a[:-2]) & (a[1:-1] >= a[2:]), False]
            if peaks.sum() >= 2:
                r, a = r[peaks], a[peaks]
            msg = "non-monotone envelope: fitted on local maxima"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    good = a > 0
    if good.sum() < 2:
        return FitResult(float("nan"), 0.0, "not enough nonzero samples")
    slope, intercept = np.polyfit(np.log(r[good]), np.log(a[good]), 1)
    return FitResult(float(slope), float(np.exp(intercept)), msg)


def _interp_periodic(values, grid: HyperGrid, y0):
    hat = np.fft.fft(values) / grid.n_points
    return complex(np.exp(1j * grid.wavenumbers * (y0 + grid.y_max)) @ hat)


@dataclass
class PhaseFit:
    amplitude: float
    log_coefficient: float
    predicted: float
    relative_error: float
    inconclusive: bool
    rhos: np.ndarray
    phases: np.ndarray


def _ray_envelope(traj: Trajectory, y0: float, sel):
    rho = np.asarray(traj.rhos)
    amps = []
    for i in np.nonzero(sel)[0]:
        u = _interp_periodic(traj.us[i], traj.grid, y0)
        ud = _interp_periodic(traj.udots[i], traj.grid, y0)
        # real solutions: u = A e^{i rho} + conj; complex ones keep the same formula
        amps.append(0.5 * (u - 1j * ud) * np.exp(-1j * rho[i]))
    return np.asarray(amps)


def scattering_phase_fit(traj: Trajectory, x_over_rho: float, rho_min: float | None = None,
                         snr_floor: float = 3.0, reference: Trajectory | None = None,
                         inverse_rho_term: bool = True) -> PhaseFit:
    """Fit the phase drift of the complex envelope along the ray y = asinh(x/rho).

    The envelope is A = (u - i u_dot) e^{-i rho} / 2, which is slowly varying
    when u ~ A e^{i rho} + c.c.  The slope of arg A against ln rho is compared
    with -(5/3 alpha0^2 + 3/2 beta0) sqrt(1 - (x/rho)^2) |a|^2.

    The free flow contributes its own O(1/rho) phase correction.  It is removed
    either by subtracting the phase of a ``reference`` run (same data, zero
    couplings, same stored times) or, by default, by fitting
    theta = c0 + slope ln rho + c1 / rho.
    """
    y0 = math.asinh(x_over_rho)
    rho = np.asarray(traj.rhos)
    if rho_min is None:
        rho_min = math.sqrt(rho[0] * rho[-1])
    sel = rho >= rho_min
    amps = _ray_envelope(traj, y0, sel)
    r = rho[sel]
    theta = np.unwrap(np.angle(amps))
    if reference is not None:
        ref_rho = np.asarray(reference.rhos)
        if ref_rho.shape != rho.shape or not np.allclose(ref_rho, rho, rtol=0, atol=1e-9):
            raise GridMismatchError("reference run must share the stored times")
        theta = theta - np.unwrap(np.angle(_ray_envelope(reference, y0, sel)))
    lr = np.log(r)
    cols = [lr, np.ones_like(lr)]
    if inverse_rho_term and reference is None:
        cols.append(1.0 / r)
    A = np.column_stack(cols)
    coef, res, _, _ = np.linalg.lstsq(A, theta, rcond=None)
    dof = max(len(theta) - A.shape[1], 1)
    sigma2 = float(np.sum((theta - A @ coef) ** 2)) / dof
    cov = sigma2 * np.linalg.inv(A.T @ A)
    slope = float(coef[0])
    slope_err = float(np.sqrt(max(cov[0, 0], 0.0)))
    a = float(np.mean(np.abs(amps)))
    c = traj.coefficients
    factor = math.sqrt(max(1.0 - x_over_rho**2, 0.0))
    predicted = -(5.0 / 3.0 * c.alpha0**2 + 1.5 * c.beta0) * factor * a * a
    rel = abs(slope - predicted) / abs(predicted) if predicted else float("nan")
    inconclusive = abs(slope) < snr_floor * slope_err if predicted == 0 else \
        abs(predicted) < snr_floor * slope_err
    return PhaseFit(a, slope, predicted, rel, bool(inconclusive), r, theta)


def _lowpass_symbol(rho, c, k2abs):
    return lp_symbol(k2abs, c * math.log2(rho), "below") if c * math.log2(rho) > 0 else \
        np.zeros_like(k2abs)


def freq_truncated_remainder(traj: Trajectory, c: float = 0.25, delta: float = 0.05,
                             C: float = 2.0, indices=None, rel_h: float = 1e-4):
    """sup_y |R_c| along the trajectory for the frequency-truncated evolution.

    With K = c log2(rho), a = -beta (so the equation reads
    (Box_H + 1 + rho^-1 a w^2) w = G with G = rho^(-1/2) alpha0 w^2) the remainder is

        R_c = -rho^-1 [P_{<K}(a w^3) - a_{<K+C} (w_{<K})^3] + 2 P'_{<K} w_dot + P''_{<K} w,

    where P' and P'' are rho-derivatives of the time-dependent cutoff symbol
    (taken by centered differences of the symbol).  Returns (rhos, norms, fitted exponent).
    """
    if not 4 * delta < c < 0.5:
        raise ConfigError(f"c must satisfy 4 delta < c < 0.5, got c={c}, delta={delta}")
    g = traj.grid
    kabs = np.abs(g.wavenumbers)
    d = _Dealiaser(g.n_points)
    coeffs = traj.coefficients
    fine_y = g.refined(4).y_samples
    if indices is None:
        indices = range(len(traj))
    out_r, out_n = [], []
    for i in indices:
        rho = traj.rhos[i]
        if rho <= 1.0:
            continue
        w, wd = traj.us[i], traj.udots[i]
        h = rel_h * rho
        p0 = _lowpass_symbol(rho, c, kabs)
        pp = _lowpass_symbol(rho + h, c, kabs)
        pm = _lowpass_symbol(rho - h, c, kabs)
        p1 = (pp - pm) / (2 * h)
        p2 = (pp - 2 * p0 + pm) / h**2
        K = c * math.log2(rho)
        a_fine = -(coeffs.beta0 + coeffs.beta1(rho * fine_y))
        a_spec = np.fft.fft(d.down(a_fine, 4) * 4)  # band-limited samples of a
        ws = np.fft.fft(w)
        full = d.down(a_fine * d.up(ws, 4) ** 3, 4)
        term1 = np.fft.ifft(p0 * np.fft.fft(full))
        a_low = np.fft.ifft(lp_symbol(kabs, K + C, "below") * a_spec / 4)
        w_low = d.up(p0 * ws, 4)
        term2 = d.down(d.up(np.fft.fft(a_low), 4) * w_low**3, 4)
        comm = 2 * np.fft.ifft(p1 * np.fft.fft(wd)) + np.fft.ifft(p2 * ws)
        R = -(term1 - term2) / rho + comm
        out_r.append(rho)
        out_n.append(float(np.max(np.abs(R))))
    r, nrm = np.asarray(out_r), np.asarray(out_n)
    good = nrm > 0
    expo = float(np.polyfit(np.log(r[good]), np.log(nrm[good]), 1)[0]) if good.sum() >= 2 else float("nan")
    return r, nrm, expo

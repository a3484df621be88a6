"""Experiment configs, batch runs and report generation (CSV, SVG, summary JSON)."""

from __future__ import annotations

import csv
import inspect
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, KgnfError
from .hypergrid import CoefficientSpec, HyperGrid
from .solver import SolverConfig, State, Trajectory, evolve, gaussian_data

log = logging.getLogger(__name__)

SCHEMA = 1
EXIT_OK, EXIT_RUNTIME, EXIT_CHECK, EXIT_USAGE = 0, 1, 2, 64


class StageError(KgnfError):
    """A run failed inside a named stage; wraps the original exception."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


def output_root(explicit=None) -> Path:
    """--out beats KGNF_OUT beats ./kgnf-out."""
    return Path(explicit or os.environ.get("KGNF_OUT") or "kgnf-out")


# --- configs -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSpec:
    """Initial data catalogue entry (a modulated gaussian in y) scaled by epsilon."""

    kind: str = "gaussian"
    epsilon: float = 0.01
    width: float = 1.0
    center: float = 0.0
    wavenumber: float = 0.0
    velocity_phase: bool = False

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ConfigError(f"unknown initial data {self.kind!r}; only 'gaussian' is catalogued")
        if not self.width > 0:
            raise ConfigError("data width must be positive")

    def state(self, grid: HyperGrid, rho0: float) -> State:
        return gaussian_data(grid, rho0, self.epsilon, self.width, self.center, self.wavenumber,
                             self.velocity_phase)

    def to_dict(self):
        return dict(kind=self.kind, epsilon=self.epsilon, width=self.width, center=self.center,
                    wavenumber=self.wavenumber, velocity_phase=self.velocity_phase)


DIAGNOSTICS = ("decay_fit", "phase_fit", "norms", "quad_nf", "freq_truncated_remainder",
               "criterion")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    coefficients: CoefficientSpec = field(default_factory=CoefficientSpec)
    grid: HyperGrid = field(default_factory=lambda: HyperGrid(6.0, 256))
    data: DataSpec = field(default_factory=DataSpec)
    rho_range: tuple = (1.0, 16.0)
    solver: SolverConfig = field(default_factory=SolverConfig)
    diagnostics: tuple = ()
    seed: int = 0
    delta: float = 0.05
    c: float = 0.25
    evolve: bool = True

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ConfigError(f"delta must lie in (0, 0.5), got {self.delta}")
        r0, r1 = self.rho_range
        if not (r0 > 0 and r1 >= r0):
            raise ConfigError(f"rho_range must satisfy 0 < rho0 <= rho_end, got {self.rho_range}")
        for d in self.diagnostics:
            if d.get("name") not in DIAGNOSTICS:
                raise ConfigError(f"unknown diagnostic {d.get('name')!r}; choose from {DIAGNOSTICS}")
            if d["name"] == "freq_truncated_remainder":
                c = float(d.get("c", self.c))
                if not 4 * self.delta < c < 0.5:
                    raise ConfigError(f"c must satisfy 4 delta < c < 0.5, got c={c}")
            if d["name"] == "criterion" and int(d.get("number", 0)) not in range(1, 11):
                raise ConfigError("criterion diagnostics need a number in 1..10")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if d.get("schema", SCHEMA) != SCHEMA:
            raise ConfigError(f"unsupported config schema {d.get('schema')!r} (expected {SCHEMA})")
        try:
            return cls(
                name=str(d.get("name", "experiment")),
                coefficients=CoefficientSpec.from_dict(d.get("coefficients", {})),
                grid=HyperGrid(**d.get("grid", {"y_max": 6.0, "n_points": 256})),
                data=DataSpec(**d.get("data", {})),
                rho_range=tuple(float(v) for v in d.get("rho_range", (1.0, 16.0))),
                solver=SolverConfig(**d.get("solver", {})),
                diagnostics=tuple(dict(x) for x in d.get("diagnostics", ())),
                seed=int(d.get("seed", 0)),
                delta=float(d.get("delta", 0.05)),
                c=float(d.get("c", 0.25)),
                evolve=bool(d.get("evolve", True)),
            )
        except TypeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    def to_dict(self):
        return {"schema": SCHEMA, "name": self.name, "coefficients": self.coefficients.to_dict(),
                "grid": self.grid.to_dict(), "data": self.data.to_dict(),
                "rho_range": list(self.rho_range), "solver": self.solver.to_dict(),
                "diagnostics": [dict(d) for d in self.diagnostics], "seed": self.seed,
                "delta": self.delta, "c": self.c, "evolve": self.evolve}

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("kgnf.configs").iterdir()
                  if p.name.endswith(".json"))


def bundled_config(name: str) -> ExperimentConfig:
    res = resources.files("kgnf.configs") / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"no bundled config {name!r}; available: {', '.join(bundled_names())}")
    return ExperimentConfig.from_dict(json.loads(res.read_text()))


def resolve_config(ref) -> ExperimentConfig:
    """A path to a JSON config, or the name of a bundled one."""
    p = Path(ref)
    if p.is_file():
        return ExperimentConfig.load(p)
    if str(ref) in bundled_names():
        return bundled_config(str(ref))
    raise FileNotFoundError(f"{ref}: no such config file or bundled config")


# --- deterministic writers ---------------------------------------------------------------------

def _num(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return v


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    path.write_text(buf.getvalue())


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload):
    path.write_text(json.dumps(_clean(payload), indent=1, sort_keys=True) + "\n")


def write_svg(path: Path, series, xlabel, ylabel, title, logx=False, logy=False, scatter=False):
    """Static line/scatter plot; byte-identical output for identical data."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "kgnf", "svg.fonttype": "none",
                                "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, x, y in series:
            x, y = np.asarray(x, float), np.asarray(y, float)
            if scatter:
                ax.plot(x, y, "o", ms=3, label=label)
            else:
                ax.plot(x, y, "-", lw=1.2, label=label)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# --- reports on a trajectory (shared by run() and the CLI) --------------------------------------

def decay_report(traj: Trajectory, out: Path, tail=0.5, expect=None, tol=None) -> dict:
    from .solver import decay_fit

    rho, amp = traj.phi_sup()
    write_csv(out / "decay.csv", ["rho", "sup_phi"], zip(rho, amp))
    if np.all(amp == 0):
        fit = {"exponent": None, "amplitude": 0.0, "warning": "zero solution"}
        passed = None if expect is None else False
    else:
        f = decay_fit(traj, tail=tail)
        fit = {"exponent": f.exponent, "amplitude": f.amplitude, "warning": f.warning}
        passed = None if expect is None else bool(abs(f.exponent - expect) <= tol)
        ref = f.amplitude * rho ** f.exponent
        write_svg(out / "decay.svg", [("sup |phi|", rho, amp), (f"fit rho^{f.exponent:.3f}", rho, ref)],
                  "rho", "sup_y |phi|", "decay", logx=True, logy=True)
    rep = {"tail": tail, **fit, "expected": expect, "tolerance": tol, "passed": passed}
    write_json(out / "decay.json", rep)
    return rep


def phase_report(traj: Trajectory, out: Path, rays=(0.0, 0.2), tolerance=0.25,
                 reference: Trajectory | None = None) -> dict:
    from .solver import scattering_phase_fit

    fits = {}
    series = []
    passed = True
    for ray in rays:
        f = scattering_phase_fit(traj, float(ray), reference=reference)
        fits[f"{float(ray):g}"] = {"amplitude": f.amplitude, "slope": f.log_coefficient,
                                   "predicted": f.predicted, "relative_error": f.relative_error,
                                   "inconclusive": f.inconclusive}
        series.append((f"x/rho={float(ray):g}", np.log(f.rhos), f.phases))
        if f.predicted:
            passed &= (not f.inconclusive) and f.relative_error <= tolerance
        else:
            passed &= f.inconclusive  # a free run must show no resolvable drift
    write_csv(out / "phase.csv", ["ray", "amplitude", "slope", "predicted", "relative_error"],
              [(r, v["amplitude"], v["slope"], v["predicted"], v["relative_error"])
               for r, v in fits.items()])
    write_svg(out / "phase.svg", series, "ln rho", "envelope phase", "phase drift")
    rep = {"tolerance": tolerance, "fits": fits, "passed": bool(passed)}
    write_json(out / "phase.json", rep)
    return rep


def norms_report(traj: Trajectory, out: Path, delta=0.05) -> dict:
    from .hypergrid import Field
    from .spectral import norm_report, sdot_candidates

    rows, header = [], None
    model = traj.model
    for i in range(len(traj)):
        st = traj.state(i)
        F = Field(model.nonlinear(st.u.values, st.rho), st.rho, traj.grid)
        rep = norm_report(st.u, st.udot, F, sdot_candidates(st.u, st.udot), delta)
        header = header or rep.csv_header()
        rows.append(rep.csv_row())
    write_csv(out / "norms.csv", header, rows)
    arr = np.array([r[:5] for r in rows], float)
    write_svg(out / "norms.svg", [("S", arr[:, 0], arr[:, 2]), ("S-dot", arr[:, 0], arr[:, 3])],
              "rho", "norm", f"norms (delta={delta:g})", logx=True,
              logy=bool(np.all(arr[:, 2:4] > 0)))
    return {"delta": delta, "snapshots": len(rows), "max_s": float(np.nanmax(arr[:, 2])),
            "max_sdot": float(np.nanmax(arr[:, 3]))}


def quad_nf_report(traj: Trajectory, out: Path, rhos=None, h=0.05, tol=1e-8) -> dict:
    from .quad_nf import quad_identity_residual, rows_to_csv

    if rhos is None:
        lo, hi = traj.rhos[0] + 2 * h, traj.rhos[-1] - 2 * h
        rhos = [r for r in (2.0 ** j for j in range(0, 12)) if lo <= r <= hi] or [0.5 * (lo + hi)]
    rows = quad_identity_residual(traj, rhos, h)
    (out / "quad_nf.csv").write_text(rows_to_csv(rows))
    t1 = max(r["t1_residual"] for r in rows)
    rep = {"rhos": list(rhos), "max_t1_residual": t1, "tolerance": tol,
           "max_identity_residual": max(r["identity_residual"] for r in rows),
           "passed": bool(t1 < tol)}
    write_json(out / "quad_nf.json", rep)
    return rep


def cubic_nf_report(traj: Trajectory, out: Path, points=None, h=0.04) -> dict:
    from .cubic_nf import CubicSymbols, cubic_remainder_check, sidecar_json
    from .errors import CheckFailure

    if traj.coefficients.beta1.is_zero:
        rep = {"points": [], "passed": None, "note": "beta1 vanishes: no cubic symbols"}
        write_json(out / "cubic_nf.json", rep)
        return rep
    symbols = CubicSymbols(traj.coefficients.beta1)
    if points is None:
        r0, r1 = traj.rhos[0] + 2 * h, traj.rhos[-1] - 2 * h
        points = [(k, r) for k, r in ((2, 2.0), (3, 4.0), (4, 8.0)) if r0 <= r <= r1]
    rows, failures = [], []
    for k, rho in points:
        try:
            rows.append(cubic_remainder_check(traj, symbols, int(k), float(rho), h))
        except CheckFailure as exc:
            failures.append(str(exc))
    write_csv(out / "cubic_nf.csv", ["k", "rho", "diff_h", "diff_h2", "ratio", "relative_diff"],
              [(r["k"], r["rho"], r["diff_h"], r["diff_h2"], r["ratio"], r["relative_diff"])
               for r in rows])
    ks = sorted({int(k) for k, _ in points})
    (out / "cubic_symbols.json").write_text(sidecar_json(symbols, ks))
    rep = {"points": rows, "failures": failures, "passed": not failures}
    write_json(out / "cubic_nf.json", rep)
    return rep


def freq_truncated_report(traj: Trajectory, out: Path, c=0.25, delta=0.05) -> dict:
    from .solver import freq_truncated_remainder

    r, nrm, expo = freq_truncated_remainder(traj, c, delta)
    write_csv(out / "freq_truncated.csv", ["rho", "sup_R_c"], zip(r, nrm))
    return {"c": c, "delta": delta, "exponent": expo}


def oscint_report(params: dict, out: Path) -> dict:
    from .oscint import OscIntegrand, cone_dichotomy_scan, scan_csv, scan_summary_json

    lam = float(params.get("lam", 64.0))
    eps = float(params.get("eps", 0.02))
    t_factors = params.get("t_factors", [0.75, 1, 1.5, 2, 3, 4, 8, 12, 16, 24, 32])
    rays = params.get("x_over_t")
    if rays is None:
        outside = [0.99, 1.0, 1.1, 1.25, 1.5]
        rays = list(np.linspace(-(1 - eps), 1 - eps, 25)) + outside + [-r for r in outside]
    integ = OscIntegrand(lam, int(params.get("sign", 1)))
    rep = cone_dichotomy_scan(integ, lam * np.asarray(t_factors, float), rays, eps=eps,
                              tol=float(params.get("tol", 1e-10)))
    (out / "oscint.csv").write_text(scan_csv(rep))
    (out / "oscint.json").write_text(scan_summary_json(rep) + "\n")
    if rep["outside_r"]:
        write_svg(out / "oscint.svg", [("outside |I+|", rep["outside_r"], rep["outside_abs"])],
                  "<(t,x)>", "|I+|", f"outside-cone falloff (lambda={lam:g})",
                  logx=True, logy=True, scatter=True)
    passed = rep["minus_to_plus"] <= 0.05 and (rep["outside_points"] < 2
                                               or rep["outside_exponent"] <= -3.0)
    return {k: v for k, v in rep.items() if k != "rows"} | {"passed": bool(passed)}


# --- run -----------------------------------------------------------------------------------------

def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except KgnfError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    except (ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        raise StageError(name, exc) from exc


def _takes_seed(func) -> bool:
    return "seed" in inspect.signature(func).parameters


@dataclass
class RunReport:
    out_dir: Path
    summary: dict
    exit_code: int


def _diagnostic(diag: dict, traj: Trajectory | None, cfg: ExperimentConfig, out: Path):
    name = diag["name"]
    if name == "criterion":
        from .checks import ALL_CHECKS

        func = ALL_CHECKS[int(diag["number"])]
        kwargs = {k: v for k, v in diag.items() if k not in ("name", "number", "label")}
        if _takes_seed(func):
            kwargs.setdefault("seed", cfg.seed)
        return func(**kwargs).to_dict()
    if traj is None:
        raise ConfigError(f"diagnostic {name!r} needs an evolved trajectory")
    if name == "decay_fit":
        return decay_report(traj, out, diag.get("tail", 0.5), diag.get("expect"),
                            diag.get("tolerance", 0.05))
    if name == "phase_fit":
        return phase_report(traj, out, diag.get("rays", (0.0, 0.2)), diag.get("tolerance", 0.25))
    if name == "norms":
        return norms_report(traj, out, diag.get("delta", cfg.delta))
    if name == "quad_nf":
        return quad_nf_report(traj, out, diag.get("rhos"), diag.get("h", 0.05))
    if name == "freq_truncated_remainder":
        return freq_truncated_report(traj, out, diag.get("c", cfg.c), cfg.delta)
    raise ConfigError(f"unknown diagnostic {name!r}")


def run(cfg: ExperimentConfig, out_dir, save_trajectory=True) -> RunReport:
    """Evolve (when requested), run each diagnostic, write reports and summary.json.

    Exit code 0 when every asserted diagnostic passed, 2 when one failed.
    Module errors propagate as StageError naming the stage.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    traj = None
    if cfg.evolve:
        init = cfg.data.state(cfg.grid, cfg.rho_range[0])
        traj = _stage("evolve", evolve, init, cfg.rho_range[1], cfg.coefficients, cfg.solver)
        if save_trajectory:
            _stage("save trajectory", traj.save, out / "trajectory")
    results, criteria = {}, {}
    for i, diag in enumerate(cfg.diagnostics):
        key = diag.get("label") or (f"criterion_{diag['number']}" if diag["name"] == "criterion"
                                    else diag["name"])
        if key in results:
            key = f"{key}_{i}"
        log.info("diagnostic %s", key)
        res = _stage(key, _diagnostic, diag, traj, cfg, out)
        results[key] = res
        number = diag.get("number") if diag["name"] == "criterion" else diag.get("criterion")
        if number is not None:
            criteria[str(int(number))] = {"passed": res.get("passed"), "diagnostic": key}
    asserted = [r.get("passed") for r in results.values() if r.get("passed") is not None]
    ok = all(asserted)
    summary = {"schema": SCHEMA, "name": cfg.name, "seed": cfg.seed,
               "trajectory": None if traj is None else {
                   "snapshots": len(traj), "rho_end": traj.rhos[-1],
                   "config_hash": traj.metadata.get("config_hash")},
               "diagnostics": results, "criteria": criteria, "passed": ok}
    write_json(out / "summary.json", summary)
    return RunReport(out, summary, EXIT_OK if ok else EXIT_CHECK)


def selftest(out_dir, numbers=None, seed=0, log_line=print) -> RunReport:
    """Run acceptance checks (default: the fast ones) and write summary.json."""
    from .checks import ALL_CHECKS

    numbers = list(numbers or FAST_CRITERIA)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    criteria = {}
    for n in numbers:
        func = ALL_CHECKS[n]
        kwargs = {"seed": seed} if _takes_seed(func) else {}
        res = _stage(f"criterion {n}", func, **kwargs)
        if log_line is not None:
            log_line(res.line())
        criteria[str(n)] = res.to_dict()
    ok = all(c["passed"] for c in criteria.values())
    summary = {"schema": SCHEMA, "name": "selftest", "seed": seed, "criteria": criteria,
               "passed": ok}
    write_json(out / "summary.json", summary)
    return RunReport(out, summary, EXIT_OK if ok else EXIT_CHECK)


FAST_CRITERIA = (1, 2, 3, 4, 10)

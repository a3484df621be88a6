import json
import subprocess
import sys
from pathlib import Path

import pytest

from kgnf import __version__
from kgnf.cli import main
from kgnf.errors import ConfigError
from kgnf.harness import (EXIT_CHECK, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, DataSpec,
                          ExperimentConfig, StageError, bundled_config, bundled_names,
                          output_root, resolve_config, run, selftest, write_json)
from kgnf.hypergrid import CoefficientSpec, HyperGrid
from kgnf.solver import SolverConfig, Trajectory

TINY = {
    "schema": 1,
    "name": "tiny-linear",
    "grid": {"y_max": 6.0, "n_points": 64},
    "data": {"kind": "gaussian", "epsilon": 0.01, "width": 1.0},
    "rho_range": [1.0, 12.0],
    "diagnostics": [{"name": "decay_fit", "criterion": 5}, {"name": "norms"}],
}


def _write(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


# --- configs ----------------------------------------------------------------------------------

def test_bundled_configs_load_and_round_trip():
    names = bundled_names()
    assert {"linear", "zero-data", "decay-small", "quadratic-cancellation",
            "scattering-cubic"} <= set(names)
    for name in names:
        cfg = bundled_config(name)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_resolve_config_prefers_paths(tmp_path):
    path = _write(tmp_path, TINY)
    assert resolve_config(path).name == "tiny-linear"
    assert resolve_config("linear").name == "linear"
    with pytest.raises(FileNotFoundError):
        resolve_config("no-such-config")


@pytest.mark.parametrize("patch", [
    {"schema": 2},
    {"delta": 0.6},
    {"rho_range": [4.0, 1.0]},
    {"diagnostics": [{"name": "bogus"}]},
    {"diagnostics": [{"name": "criterion", "number": 11}]},
    {"diagnostics": [{"name": "freq_truncated_remainder", "c": 0.1}]},
    {"grid": {"y_max": 6.0, "n_points": 64, "extra": 1}},
])
def test_invalid_configs_are_rejected(patch):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(TINY | patch)


def test_bad_json_is_a_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_data_spec_builds_states():
    grid = HyperGrid(6.0, 64)
    st = DataSpec(epsilon=0.2).state(grid, 2.0)
    assert st.rho == 2.0
    assert abs(st.u.values).max() == pytest.approx(0.2, rel=1e-2)


def test_output_root_precedence(monkeypatch, tmp_path):
    monkeypatch.setenv("KGNF_OUT", str(tmp_path / "env"))
    assert output_root() == tmp_path / "env"
    assert output_root(tmp_path / "flag") == tmp_path / "flag"
    monkeypatch.delenv("KGNF_OUT")
    assert output_root() == Path("kgnf-out")


def test_write_json_replaces_nan(tmp_path):
    write_json(tmp_path / "x.json", {"b": float("nan"), "a": [1.5, float("inf")]})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": [1.5, None], "b": None}


# --- run -----------------------------------------------------------------------------------------

def test_run_writes_reports(tmp_path):
    rep = run(ExperimentConfig.from_dict(TINY), tmp_path / "out")
    out = rep.out_dir
    summary = json.loads((out / "summary.json").read_text())
    assert summary["criteria"]["5"]["diagnostic"] == "decay_fit"
    assert summary["trajectory"]["rho_end"] == 12.0
    assert (out / "config.json").is_file()
    assert (out / "trajectory" / "manifest.json").is_file()
    assert any(p.suffix == ".csv" for p in out.iterdir())
    assert any(p.suffix == ".svg" for p in out.iterdir())
    assert rep.exit_code == EXIT_OK
    assert len(Trajectory.load(out / "trajectory")) == summary["trajectory"]["snapshots"]


def test_run_reports_failed_expectations(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY | {"diagnostics": [
        {"name": "decay_fit", "expect": -5.0, "tolerance": 0.01}]})
    rep = run(cfg, tmp_path / "out")
    assert rep.exit_code == EXIT_CHECK
    assert rep.summary["passed"] is False


def test_run_is_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY)
    a, b = run(cfg, tmp_path / "a"), run(cfg, tmp_path / "b")
    for csv in sorted(a.out_dir.glob("*.csv")):
        assert csv.read_bytes() == (b.out_dir / csv.name).read_bytes()
    for svg in sorted(a.out_dir.glob("*.svg")):
        assert svg.read_bytes() == (b.out_dir / svg.name).read_bytes()


def test_blowup_surfaces_as_a_stage_error(tmp_path):
    cfg = ExperimentConfig(coefficients=CoefficientSpec(alpha0=1.0), grid=HyperGrid(6.0, 64),
                           data=DataSpec(epsilon=5.0), rho_range=(1.0, 50.0),
                           solver=SolverConfig(blowup_factor=10.0))
    with pytest.raises(StageError) as info:
        run(cfg, tmp_path / "out")
    assert info.value.stage == "evolve"


def test_trajectory_diagnostics_need_evolution(tmp_path):
    cfg = ExperimentConfig.from_dict(TINY | {"evolve": False})
    with pytest.raises(StageError):
        run(cfg, tmp_path / "out")


def test_selftest_runs_a_single_criterion(tmp_path):
    lines = []
    rep = selftest(tmp_path / "st", [1], log_line=lines.append)
    assert rep.exit_code == EXIT_OK
    assert lines[0].startswith("[1]") or "PASS" in lines[0]
    assert json.loads((tmp_path / "st" / "summary.json").read_text())["criteria"]["1"]["passed"]


# --- command line ---------------------------------------------------------------------------

def test_cli_version_and_help(capsys):
    assert main(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out
    assert main(["simulate", "--help"]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["simulate"],
    ["simulate", "no-such-config"],
    ["oscint", "missing.json"],
    ["decay-report", "nowhere"],
    ["nf-cubic", "linear", "--points", "2-3"],
    ["selftest", "--criteria", "12"],
])
def test_cli_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == EXIT_USAGE


def test_cli_rejects_non_trajectory_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["norms", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_cli_simulate_then_reports(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    sim = tmp_path / "sim"
    assert main(["simulate", str(cfg), "--out", str(sim)]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["passed"] is True
    traj = str(sim / "trajectory")
    assert main(["decay-report", traj, "--out", str(tmp_path / "d")]) == EXIT_OK
    assert main(["decay-report", traj, "--expect", "-9", "--out", str(tmp_path / "e")]) == EXIT_CHECK
    assert main(["norms", traj, "--delta", "0.1", "--out", str(tmp_path / "n")]) == EXIT_OK
    assert main(["norms", traj, "--delta", "0.7", "--out", str(tmp_path / "m")]) == EXIT_USAGE
    summary = json.loads((tmp_path / "n" / "summary.json").read_text())
    assert summary["command"] == "norms"


def test_cli_quadratic_suite_on_a_bundled_config(tmp_path):
    out = tmp_path / "q"
    assert main(["nf-quad", "zero-data", "--rhos", "2", "4", "--out", str(out)]) == EXIT_OK
    assert (out / "source" / "trajectory" / "manifest.json").is_file()


def test_cli_oscint(tmp_path):
    params = _write(tmp_path, {"lam": 8.0, "eps": 0.05,
                               "t_factors": [1, 2, 4, 8, 12, 16, 24, 32],
                               "x_over_t": [-0.9, 0.0, 0.5, 0.9, 1.0, 1.2, -1.2]}, "params.json")
    code = main(["oscint", str(params), "--out", str(tmp_path / "o")])
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert code == (EXIT_OK if summary["passed"] else EXIT_CHECK)
    assert summary["report"]["minus_to_plus"] <= 0.05
    assert (tmp_path / "o" / "oscint.csv").is_file()


def test_cli_threads_flag(tmp_path):
    assert main(["simulate", "zero-data", "--threads", "0", "--out", str(tmp_path)]) == EXIT_USAGE


def test_cli_runtime_error_exit_code(tmp_path):
    cfg = _write(tmp_path, {"schema": 1, "coefficients": {"alpha0": 1.0},
                            "grid": {"y_max": 6.0, "n_points": 64},
                            "data": {"epsilon": 5.0}, "rho_range": [1.0, 50.0],
                            "solver": {"blowup_factor": 10.0}})
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "kgnf.cli", "--version"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0
    assert __version__ in res.stdout

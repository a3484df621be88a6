"""Command-line entry point: ``kgnf <subcommand> ...``.

Exit codes: 0 success, 1 runtime error, 2 failed check, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import KgnfError
from .harness import (EXIT_CHECK, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, FAST_CRITERIA, StageError,
                      bundled_names, cubic_nf_report, decay_report, norms_report, oscint_report,
                      output_root, phase_report, quad_nf_report, resolve_config, run, selftest,
                      write_json)
from .solver import Trajectory

log = logging.getLogger("kgnf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--out", help="output directory (default: $KGNF_OUT or ./kgnf-out, plus a "
                                 "per-subcommand folder)")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on BLAS/FFT threads (results do not depend on it)")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgnf", description="Hyperboloidal Klein-Gordon normal-form toolkit.")
    parser.add_argument("--version", action="version", version=f"kgnf {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="evolve a config and run its diagnostics")
    p.add_argument("config", help="config JSON path or bundled name "
                                  f"({', '.join(bundled_names())})")
    _common(p)

    p = sub.add_parser("nf-quad", help="quadratic normal-form residual suite on a trajectory")
    p.add_argument("trajectory", help="trajectory directory or bundled config name")
    p.add_argument("--rhos", type=float, nargs="+")
    p.add_argument("--h", type=float, default=0.05, help="rho stencil step")
    _common(p)

    p = sub.add_parser("nf-cubic", help="cubic symbols and remainder refinement on a trajectory")
    p.add_argument("trajectory", help="trajectory directory or bundled config name")
    p.add_argument("--points", nargs="+", metavar="K:RHO",
                   help="(k, rho) pairs such as 2:2 3:4")
    p.add_argument("--h", type=float, default=0.04)
    _common(p)

    p = sub.add_parser("oscint", help="inside/outside-cone scan of the oscillatory integrals")
    p.add_argument("params", help="JSON with lam, eps, t_factors, x_over_t, sign, tol")
    _common(p)

    p = sub.add_parser("norms", help="S, S-dot and N norm time series")
    p.add_argument("trajectory", help="trajectory directory or bundled config name")
    p.add_argument("--delta", type=float, default=0.05)
    _common(p)

    p = sub.add_parser("decay-report", help="power-law fit of sup|phi|")
    p.add_argument("trajectory", help="trajectory directory or bundled config name")
    p.add_argument("--tail", type=float, default=0.5)
    p.add_argument("--expect", type=float, help="expected exponent (enables pass/fail)")
    p.add_argument("--tolerance", type=float, default=0.03)
    _common(p)

    p = sub.add_parser("phase-report", help="log-phase drift along rays")
    p.add_argument("trajectory", help="trajectory directory or bundled config name")
    p.add_argument("--rays", type=float, nargs="+", default=[0.0, 0.2])
    p.add_argument("--tolerance", type=float, default=0.25)
    p.add_argument("--reference", help="free-flow trajectory with the same stored times")
    _common(p)

    p = sub.add_parser("selftest", help="acceptance checks with a fixed seed")
    p.add_argument("--criteria", type=int, nargs="+", choices=range(1, 11), metavar="N",
                   help=f"criteria to run (default: the fast set {list(FAST_CRITERIA)})")
    p.add_argument("--all", action="store_true", help="run all ten criteria (about 20 minutes)")
    _common(p)
    return parser


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _load_trajectory(ref, out: Path) -> Trajectory:
    p = Path(ref)
    if (p / "manifest.json").is_file():
        return Trajectory.load(p)
    if p.exists():
        raise UsageError(f"{ref}: not a trajectory directory (manifest.json missing)")
    cfg = resolve_config(ref)
    log.info("simulating bundled config %s", ref)
    rep = run(replace(cfg, diagnostics=()), out / "source")
    return Trajectory.load(rep.out_dir / "trajectory")


def _parse_points(items):
    pts = []
    for item in items:
        try:
            k, rho = item.split(":")
            pts.append((int(k), float(rho)))
        except ValueError as exc:
            raise UsageError(f"bad point {item!r}; expected K:RHO") from exc
    return pts


def _status(passed):
    return EXIT_OK if passed in (True, None) else EXIT_CHECK


def dispatch(args) -> int:
    out = output_root(args.out) if args.out else output_root() / args.command
    out.mkdir(parents=True, exist_ok=True)
    cmd = args.command
    if cmd == "simulate":
        try:
            cfg = resolve_config(args.config)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from exc
        rep = run(cfg.with_seed(args.seed) if args.seed else cfg, out)
        print(json.dumps({"out": str(out), "passed": rep.summary["passed"],
                          "criteria": rep.summary["criteria"]}, sort_keys=True))
        return rep.exit_code
    if cmd == "selftest":
        numbers = list(range(1, 11)) if args.all else args.criteria
        rep = selftest(out, numbers, args.seed)
        print("selftest " + ("PASS" if rep.summary["passed"] else "FAIL") + f" ({out})")
        return rep.exit_code
    if cmd == "oscint":
        path = Path(args.params)
        if not path.is_file():
            raise UsageError(f"{args.params}: no such params file")
        rep = oscint_report(json.loads(path.read_text()), out)
    else:
        try:
            traj = _load_trajectory(args.trajectory, out)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from exc
        if cmd == "nf-quad":
            rep = quad_nf_report(traj, out, args.rhos, args.h)
        elif cmd == "nf-cubic":
            rep = cubic_nf_report(traj, out, _parse_points(args.points) if args.points else None,
                                  args.h)
        elif cmd == "norms":
            if not 0 < args.delta < 0.5:
                raise UsageError("--delta must lie in (0, 0.5)")
            rep = norms_report(traj, out, args.delta)
        elif cmd == "decay-report":
            rep = decay_report(traj, out, args.tail, args.expect, args.tolerance)
        else:
            ref = Trajectory.load(args.reference) if args.reference else None
            rep = phase_report(traj, out, args.rays, args.tolerance, ref)
    summary = {"schema": 1, "command": cmd, "report": rep, "passed": rep.get("passed")}
    write_json(out / "summary.json", summary)
    print(json.dumps({"out": str(out), "passed": rep.get("passed")}, sort_keys=True))
    return _status(rep.get("passed"))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _set_threads(args.threads)
        return dispatch(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except StageError as exc:
        print(f"kgnf: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (KgnfError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"kgnf: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

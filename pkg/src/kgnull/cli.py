"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure,
3 a verification check did not pass.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import spectral
from .analytic import run_identity_suite
from .config import ConfigError, load_config, load_scan
from .diagnostics import decay_fit
from .integrator import NumericalFailure
from .runner import convergence_study, decay_check, read_diagnostics, read_manifest, run_scan, run_single, write_rates
from .snapshot import SnapshotFormatError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _window(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("window must be 'a,b'")
    a, b = (float(p) for p in parts)
    if not a < b:
        raise argparse.ArgumentTypeError("window needs a < b")
    return a, b


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgnull", description="Spectral Klein-Gordon null-form experiments")
    p.add_argument("--threads", type=int, default=None, help="cap FFT worker threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="evolve one configuration")
    run.add_argument("config")

    scan = sub.add_parser("scan", help="run a mass scan")
    scan.add_argument("config")

    conv = sub.add_parser("converge", help="vanishing-mass rate table for a scan directory")
    conv.add_argument("scan_dir")
    conv.add_argument("--order", type=int, choices=(0, 1), default=None)
    conv.add_argument("--tolerance", type=float, default=0.3, help="allowed |p - p_target|")

    ver = sub.add_parser("verify-identities", help="run the null-form identity suite")
    ver.add_argument("--pairs", type=int, default=20)
    ver.add_argument("--seed", type=int, default=20200401)

    fit = sub.add_parser("fit-decay", help="fit sup|v| decay in a run directory")
    fit.add_argument("run_dir")
    fit.add_argument("--window", type=_window, default=None, help="t_a,t_b (default: config window)")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_single(cfg, args.threads)
    print(f"wrote {result.run_dir}")
    return EXIT_OK


def _cmd_scan(args) -> int:
    spec = load_scan(args.config)
    dirs = run_scan(spec, args.threads)
    for m, d in dirs.items():
        print(f"m={m:g}: {d}")
    return EXIT_OK


def _cmd_converge(args) -> int:
    rows = convergence_study(args.scan_dir, args.order)
    write_rates(Path(args.scan_dir) / "rates.csv", rows)
    ok = True
    print(f"{'m':>8} {'t':>8} {'D':>12} {'D/t':>12} {'p':>8}")
    for r in rows:
        p = "" if r.p is None else f"{r.p:8.3f}"
        print(f"{r.m:8.4g} {r.t:8.4g} {r.D:12.5e} {r.D_over_t:12.5e} {p:>8}")
        if r.p is not None and abs(r.p - 2.0) > args.tolerance:
            ok = False
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_verify(args) -> int:
    results = run_identity_suite(n_pairs=args.pairs, seed=args.seed)
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        print(f"{flag}  {r.name:<36} max residual {r.max_residual:.3e} (tol {r.tolerance:g}, {r.n_checks} checks)")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def _cmd_fit(args) -> int:
    cfg, _ = read_manifest(args.run_dir)
    window = args.window or cfg.decay_window
    if window is None:
        raise ConfigError("no --window given and the run config sets no decay window")
    records = read_diagnostics(args.run_dir)
    ok = True
    for i in range(cfg.n_species):
        fit = decay_fit(records, i, window, cfg.m)
        passed = decay_check(fit, cfg.m)
        ok &= passed
        print(
            f"species {i}: slope {fit.slope:.4f}  C {fit.C:.4e}  ratio [{fit.min_ratio:.3f}, {fit.max_ratio:.3f}]"
            f"  rms {fit.residual:.3e}  {'PASS' if passed else 'FAIL'}"
        )
    return EXIT_OK if ok else EXIT_CHECK


_COMMANDS = {
    "run": _cmd_run,
    "scan": _cmd_scan,
    "converge": _cmd_converge,
    "verify-identities": _cmd_verify,
    "fit-decay": _cmd_fit,
}


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.threads is not None:
            spectral.set_workers(args.threads)
        return _COMMANDS[args.command](args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, SnapshotFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()

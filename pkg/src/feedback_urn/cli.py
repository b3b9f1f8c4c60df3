"""Command-line entry point: ``feedback-urn {limit,run,report,check}``.

Exit codes: 0 ok, 1 usage or invalid input, 2 a golden check failed,
3 runtime error. The default output directory is taken from
``FEEDBACK_URN_OUTPUT_DIR`` when neither ``--out`` nor the config sets one.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ExperimentFile, load_config
from .deployment import run_scenario
from .errors import ConfigError, FeedbackUrnError, SchemaMismatch
from .harness import (
    ScenarioSummary,
    default_target,
    read_runlog_csv,
    report_one,
    summarize,
    write_runlog_csv,
)
from .limits import (
    BetaLimit,
    DeterministicMatrix2,
    MixedParams,
    large_kappa_approx,
    mixed_limit,
    renlund_limit,
)

logger = logging.getLogger("feedback_urn")

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_RUNTIME = 0, 1, 2, 3
OUTPUT_ENV = "FEEDBACK_URN_OUTPUT_DIR"
FALLBACK_OUTPUT = "feedback-urn-out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {len(vals)}")
    return vals


def _fmt(x: float) -> str:
    return f"{x:.6g}" if math.isfinite(x) else str(x)


def cmd_limit(args) -> int:
    if args.mixed:
        missing = [k for k in ("wd", "wr", "da", "db", "ra", "rb") if getattr(args, k) is None]
        if missing:
            raise UsageError("--mixed needs " + ", ".join("--" + k for k in missing))
        try:
            p = MixedParams(args.wd, args.wr, args.da, args.db, args.ra, args.rb)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        x = mixed_limit(p)
        print("kind: PointMass")
        print(f"x*: {_fmt(x)}")
        print(f"lambda*: {_fmt(p.lambda_star)}")
        print(f"R: {_fmt(p.R)}")
        print(f"delta_d: {_fmt(p.delta_d)}")
        print(f"kappa: {_fmt(p.kappa) if p.delta_d != 0 else 'undefined (delta_d = 0)'}")
        try:
            print(f"large-kappa approximation: {_fmt(large_kappa_approx(p.lambda_star, p.R, p.delta_d))}")
        except ZeroDivisionError:
            print("large-kappa approximation: undefined (R + delta_d = 0)")
        return EXIT_OK
    if args.matrix is None:
        raise UsageError("give --matrix a,b,c,d or --mixed with its rates")
    a, b, c, d = _floats(args.matrix, 4, "--matrix")
    init = _floats(args.init, 2, "--init") if args.init else (1.0, 1.0)
    try:
        m = DeterministicMatrix2(a, b, c, d)
        res = renlund_limit(m, *init)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if isinstance(res, BetaLimit):
        print("kind: Beta")
        print(f"alpha: {_fmt(res.alpha)}")
        print(f"beta: {_fmt(res.beta)}")
    else:
        print("kind: PointMass")
        print(f"x*: {_fmt(res.x_star)}")
        if res.flagged:
            print("note: two admissible roots; picked the one nearest 1/2")
    return EXIT_OK


def _output_dir(args, exp: ExperimentFile | None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if exp is not None and exp.output_dir:
        return Path(exp.output_dir)
    return Path(os.environ.get(OUTPUT_ENV, FALLBACK_OUTPUT))


def _select(exp: ExperimentFile, names) -> list:
    if not names:
        return list(exp.scenarios)
    known = {s.name: s for s in exp.scenarios}
    unknown = [n for n in names if n not in known]
    if unknown:
        raise UsageError(f"unknown scenario(s): {', '.join(unknown)}")
    return [known[n] for n in names]


def _write_summary(out: Path, summaries: list[ScenarioSummary]) -> None:
    (out / "summary.json").write_text(json.dumps([s.as_dict() for s in summaries], indent=2) + "\n", encoding="utf-8")
    (out / "summary.txt").write_text("".join(s.line() + "\n" for s in summaries), encoding="utf-8")


def cmd_run(args) -> int:
    exp = load_config(args.config)
    out = _output_dir(args, exp)
    out.mkdir(parents=True, exist_ok=True)
    plot = exp.plot and not args.no_plot
    summaries: list[ScenarioSummary] = []
    errors = 0
    for cfg in _select(exp, args.scenario):
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        if args.reps_override is not None:
            cfg = replace(cfg, reps=args.reps_override)
        target, tol = default_target(cfg)
        t0 = time.perf_counter()
        try:
            log = run_scenario(cfg, workers=args.threads)
            path = write_runlog_csv(log, out / f"{cfg.name}.csv", target)
        except Exception as exc:  # isolate scenarios from each other
            logger.error("scenario %s failed: %s", cfg.name, exc)
            errors += 1
            summaries.append(ScenarioSummary(cfg.name, cfg.reps, cfg.horizon_days, math.nan, math.nan,
                                             target, tol, None, error=str(exc)))
            print(summaries[-1].line(), flush=True)
            continue
        elapsed = time.perf_counter() - t0
        s = summarize(cfg.name, log.terminal(), log.n_days, target, tol, elapsed, int(log.fallbacks.sum()))
        summaries.append(s)
        print(s.line(), flush=True)
        if plot:
            try:
                report_one(read_runlog_csv(path), out, target)
            except Exception as exc:
                logger.warning("report for %s failed: %s", cfg.name, exc)
    _write_summary(out, summaries)
    if errors:
        return EXIT_RUNTIME
    if args.check and any(s.passed is False for s in summaries):
        return EXIT_CHECK
    return EXIT_OK


def cmd_report(args) -> int:
    paths = sorted(p for pattern in args.csv for p in glob.glob(pattern))
    paths = [p for p in paths if not p.endswith(".bands.csv")]
    if not paths:
        raise UsageError(f"no CSV files match {' '.join(args.csv)}")
    for p in paths:
        log = read_runlog_csv(p)
        out = Path(args.out) if args.out else Path(p).parent
        out.mkdir(parents=True, exist_ok=True)
        written = report_one(log, out, args.target, plot=not args.no_plot)
        print(f"{log.scenario}: " + ", ".join(written.values()))
    return EXIT_OK


def cmd_check(args) -> int:
    """Golden checks recomputed from the CSVs a previous ``run`` wrote."""
    exp = load_config(args.config)
    csv_dir = Path(args.csv_dir) if args.csv_dir else _output_dir(args, exp)
    failed = False
    for cfg in _select(exp, args.scenario):
        path = csv_dir / f"{cfg.name}.csv"
        if not path.exists():
            raise UsageError(f"missing run log {path}")
        log = read_runlog_csv(path)
        frac = log.fraction_matrix()
        target, tol = default_target(cfg)
        s = summarize(cfg.name, frac[:, -1], frac.shape[1], target, tol)
        print(s.line())
        failed |= s.passed is False
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="feedback-urn", description="Urn and point-process feedback-loop experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    lim = sub.add_parser("limit", help="asymptotic urn fraction for a matrix or mixed rates")
    lim.add_argument("--matrix", help="a,b,c,d replacement means (row = drawn color)")
    lim.add_argument("--init", help="initial balls nA,nB (Beta limits)")
    lim.add_argument("--mixed", action="store_true", help="discovered + reported parameterisation")
    for k in ("wd", "wr", "da", "db", "ra", "rb"):
        lim.add_argument(f"--{k}", type=float)
    lim.set_defaults(func=cmd_limit)

    run = sub.add_parser("run", help="simulate every scenario of a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="master seed for every scenario")
    run.add_argument("--reps-override", type=int)
    run.add_argument("--threads", type=int, default=1, help="worker processes")
    run.add_argument("--out", help=f"output directory (else config, ${OUTPUT_ENV}, ./{FALLBACK_OUTPUT})")
    run.add_argument("--scenario", action="append", help="only this scenario (repeatable)")
    run.add_argument("--check", action="store_true", help="exit 2 if a median misses its target")
    run.add_argument("--no-plot", action="store_true")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="quantile bands and plots from run-log CSVs")
    rep.add_argument("csv", nargs="+", help="CSV paths or glob patterns")
    rep.add_argument("--out")
    rep.add_argument("--target", type=float, help="target line (default: from the CSV header)")
    rep.add_argument("--no-plot", action="store_true")
    rep.set_defaults(func=cmd_report)

    chk = sub.add_parser("check", help="compare logged terminal medians with their targets")
    chk.add_argument("config")
    chk.add_argument("--csv-dir")
    chk.add_argument("--out", help=argparse.SUPPRESS)
    chk.add_argument("--scenario", action="append")
    chk.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("feedback-urn: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, SchemaMismatch, FileNotFoundError) as exc:
        print(f"feedback-urn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FeedbackUrnError as exc:
        print(f"feedback-urn: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("unexpected failure")
        print(f"feedback-urn: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""``dyexp`` command line: run, sweep, verify and fit.

Exit codes: 0 on success, 1 on usage error, 2 when a verification fails.
"""

from __future__ import annotations

import argparse
import csv
import sys

from . import core, harness
from .errors import DyingExpertsError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learner", required=True, metavar="{" + "|".join(harness.LEARNERS) + "}")
    p.add_argument("--adversary", required=True, metavar="{" + "|".join(harness.ADVERSARIES) + "}")
    p.add_argument("--k", type=int, default=8, help="number of experts")
    p.add_argument("--t", type=int, default=1000, help="horizon")
    p.add_argument("--m", type=int, default=0, help="number of nights")
    p.add_argument("--seeds", type=int, default=1, help="number of replicas")
    p.add_argument("--seed", type=int, default=0, help="base seed; replica i uses seed + i")
    p.add_argument("--eta", default=None, help="fixed:x, anytime[:c] or adahedge")
    p.add_argument("--p", type=float, default=0.5, help="Bernoulli parameter for the bernoulli adversary")
    p.add_argument("--means", type=_float_list, default=None, help="per-expert means for the gap adversary")
    p.add_argument("--base", default="hpu", choices=("hpu", "hpk"), help="weights wrapped by adahedge/flipflop")
    p.add_argument("--instance", default=None, help="instance file for --adversary file")
    p.add_argument("--out", default=None, help="CSV destination (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dyexp", description="Online learning with dying experts.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run replicas and emit one CSV row per seed")
    _add_run_flags(run)
    run.add_argument("--dump-instance", default=None, metavar="FILE",
                     help="write the first replica's instance in the plain-text format")
    run.add_argument("--trace", default=None, metavar="FILE",
                     help="write per-round diagnostics of the first replica as CSV")

    sw = sub.add_parser("sweep", help="repeat a run over a list of parameter values")
    _add_run_flags(sw)
    sw.add_argument("--param", required=True, choices=("t", "k", "m"))
    sw.add_argument("--values", required=True, type=_int_list)

    ver = sub.add_parser("verify", help="certify learners against brute-force oracles")
    ver.add_argument("--suite", required=True, metavar="{" + "|".join(harness.SUITES) + "}")
    ver.add_argument("--k-max", type=int, default=None)
    ver.add_argument("--trials", type=int, default=None)
    ver.add_argument("--tol", type=float, default=None)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", default=None, help="report destination (default stdout)")

    fit = sub.add_parser("fit", help="log-log slope of mean regret against T from a run/sweep CSV")
    fit.add_argument("csv", help="CSV file with T and regret columns")
    fit.add_argument("--column", default="ranking_regret")
    fit.add_argument("--resamples", type=int, default=1000)
    return parser


def _spec(args) -> harness.RunSpec:
    if args.learner not in harness.LEARNERS:
        raise UsageError(f"unknown learner {args.learner!r}; valid: {', '.join(harness.LEARNERS)}")
    if args.adversary not in harness.ADVERSARIES:
        raise UsageError(f"unknown adversary {args.adversary!r}; valid: {', '.join(harness.ADVERSARIES)}")
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    try:
        return harness.RunSpec(args.learner, args.adversary, args.k, args.t, args.m, args.eta,
                               args.p, args.means, args.base, args.instance)
    except ValueError as e:
        raise UsageError(str(e))


def _open_out(path):
    return open(path, "w", newline="") if path else sys.stdout


def _emit(text: str, path) -> None:
    fh = _open_out(path)
    try:
        fh.write(text)
    finally:
        if path:
            fh.close()


def cmd_run(args) -> int:
    spec = _spec(args)
    seeds = range(args.seed, args.seed + args.seeds)
    if args.dump_instance or args.trace:
        inst = harness.make_instance(spec, args.seed)
        if args.dump_instance:
            core.write_instance(args.dump_instance, inst.losses, inst.schedule)
        if args.trace:
            rec = harness.run_learner(spec, inst.losses, inst.schedule)
            with open(args.trace, "w", newline="") as fh:
                harness.write_trace(rec, fh)
    rows = harness.run_replicas(spec, seeds)
    _emit(harness.csv_text(rows, harness.RUN_COLUMNS), args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = _spec(args)
    seeds = range(args.seed, args.seed + args.seeds)
    try:
        rows = harness.sweep(spec, args.param, args.values, seeds)
    except ValueError as e:
        raise UsageError(str(e))
    _emit(harness.csv_text(rows, harness.SWEEP_COLUMNS), args.out)
    return 0


def cmd_verify(args) -> int:
    if args.suite not in harness.SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; valid: {', '.join(harness.SUITES)}")
    rep = harness.run_suite(args.suite, args.k_max, args.trials, args.tol, args.seed)
    _emit(rep.text(), args.out)
    return 0 if rep.passed else 2


def cmd_fit(args) -> int:
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "T" not in rows[0] or args.column not in rows[0]:
        raise UsageError(f"{args.csv} needs columns T and {args.column}")
    try:
        res = harness.fit_exponent(harness.group_rows(rows, "T", args.column), args.resamples)
    except ValueError as e:
        raise UsageError(str(e))
    if not res.testable:
        print(f"untestable: {res.note}")
    else:
        print(f"slope={res.slope:.6f} ci95=[{res.low:.6f}, {res.high:.6f}]")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "fit": cmd_fit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DyingExpertsError, ValueError, OSError) as e:
        print(f"dyexp: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

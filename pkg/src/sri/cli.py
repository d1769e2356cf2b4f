"""Command-line entry point: ``sri simulate | estimate | diagnose | report``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .dataset import CsvSchema, load_csv
from .diagnostics import diagnose, report_json
from .estimators import ESTIMATORS, dsl_estimate, naive_estimate, ppi_estimate, sri_noisy, sri_perfect
from .harness import format_table, load_plan, paper_scale, read_report, run_monte_carlo
from .network import NetworkConfig


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sri", description="Surrogate representation inference toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo plan and write the summary CSV")
    sim.add_argument("--plan", required=True, help="flat key = value plan file")
    sim.add_argument("--out", required=True, help="summary CSV path")
    sim.add_argument("--raw-out", help="optional per-replication CSV path")
    sim.add_argument("--workers", type=int, default=None, help="parallel replications (default: $SRI_WORKERS or 1)")
    sim.add_argument("--timing", action="store_true", help="fill the runtime columns (output no longer reproducible)")
    sim.add_argument("--paper-scale", action="store_true", help="override n, d, replications with the full-size design")

    est = sub.add_parser("estimate", help="estimate both outcome means from a CSV dataset")
    est.add_argument("--data", required=True)
    est.add_argument("--estimator", required=True, choices=ESTIMATORS)
    est.add_argument("--k", type=int, default=None, help="cross-fitting folds (default 2, or 5 for sri-noisy)")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", required=True, help="JSON output path")
    est.add_argument("--coder", type=int, default=0, help="coder column used as the label by single-label estimators")
    est.add_argument("--num-classes", type=int, default=None)
    est.add_argument("--learning-rate", type=float, default=1e-3)
    est.add_argument("--max-epochs", type=int, default=200)

    diag = sub.add_parser("diagnose", help="assumption checks on the gold-coded subset")
    diag.add_argument("--data", required=True)
    diag.add_argument("--delta", type=float, default=None, help="equivalence margin; omit to report only the interval")
    diag.add_argument("--b", type=int, default=999, help="permutation count")
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--pca-dims", type=int, default=30)
    diag.add_argument("--out", required=True, help="JSON output path")

    rep = sub.add_parser("report", help="print a simulation summary CSV as an aligned table")
    rep.add_argument("--in", dest="inp", required=True)
    return parser


def _require_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_simulate(args):
    _require_file(args.plan)
    plan = load_plan(args.plan)
    if args.paper_scale:
        plan = paper_scale(plan)
    report = run_monte_carlo(plan, args.workers)
    _write(args.out, report.to_csv(args.timing))
    if args.raw_out:
        _write(args.raw_out, report.raw_csv(args.timing))


def cmd_estimate(args):
    _require_file(args.data)
    data = load_csv(args.data, CsvSchema(args.num_classes))
    if args.estimator in ("sri", "sri-noisy"):
        net = NetworkConfig(learning_rate=args.learning_rate, max_epochs=args.max_epochs)
        if args.estimator == "sri":
            k = args.k or 2
            est = sri_perfect(data, k, net, args.seed, coder=args.coder)
        else:
            k = args.k or 5
            est = sri_noisy(data, k, net, args.seed)
    else:
        if data.pred is None:
            raise ValueError(f"estimator {args.estimator} needs a 'pred' column of machine predictions")
        if not data.labeled.size:
            raise ValueError("cannot fit outcome head: the data have no labeled units")
        if args.estimator == "naive":
            est = naive_estimate(data, data.pred)
        elif args.estimator == "dsl":
            est = dsl_estimate(data, data.pred, args.coder)
        else:
            est = ppi_estimate(data, data.pred, args.coder)
        est.seed = args.seed
    _write(args.out, est.to_json() + "\n")


def cmd_diagnose(args):
    _require_file(args.data)
    data = load_csv(args.data)
    report = diagnose(data, args.delta, args.b, args.seed, args.pca_dims)
    _write(args.out, report_json(report) + "\n")


def cmd_report(args):
    _require_file(args.inp)
    with open(args.inp, encoding="utf-8") as fh:
        rows = read_report(fh.read())
    print(format_table(rows))


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "diagnose": cmd_diagnose, "report": cmd_report}


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sri {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError, json.JSONDecodeError) as exc:
        message = " ".join(str(exc).split())
        print(f"sri {args.command}: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

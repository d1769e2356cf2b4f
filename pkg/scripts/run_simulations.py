"""Run the perfect- and noisy-annotation sweeps and print their summary tables.

    python3 scripts/run_simulations.py --out results
    python3 scripts/run_simulations.py --plans scripts/plans/noisy.txt --workers 4 --paper-scale
"""

import argparse
import sys
import time
from pathlib import Path

from sri.harness import format_table, load_plan, paper_scale, run_monte_carlo

HERE = Path(__file__).resolve().parent
SHOWN = ("machine_acc", "coder_acc", "estimator", "bias", "rmse", "mean_se", "coverage_95", "failures")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--plans", nargs="+", type=Path,
                        default=[HERE / "plans" / "perfect.txt", HERE / "plans" / "noisy.txt"])
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true")
    args = parser.parse_args(argv)

    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.plans:
        plan = load_plan(path)
        if args.paper_scale:
            plan = paper_scale(plan)
        start = time.perf_counter()
        report = run_monte_carlo(plan, args.workers)
        elapsed = time.perf_counter() - start
        (args.out / f"{path.stem}.csv").write_text(report.to_csv())
        (args.out / f"{path.stem}_raw.csv").write_text(report.raw_csv())
        print(f"\n{path.stem}: oracle effect {report.oracle_effect:.5f} (MC se {report.oracle_se:.1e}), "
              f"{plan.replications} replications in {elapsed / 60:.1f} min")
        print(format_table(report.rows, SHOWN))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Rejection rates of the equivalence permutation test.

Two scenarios on gold-coded samples from the synthetic design: coder 2
copies coder 1 (dependent errors; the test should almost never reject) and
independent coders (the test should reject for a generous margin).
"""

import argparse
import sys
from dataclasses import replace

import numpy as np

from sri.dataset import SynthConfig, corrupt_labels, generate_synthetic
from sri.diagnostics import EquivTestConfig, equivalence_permutation_test


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--n", type=int, default=200, help="gold-coded units per replication")
    parser.add_argument("--d", type=int, default=64)
    parser.add_argument("--b", type=int, default=999)
    parser.add_argument("--accuracy", type=float, default=0.85)
    parser.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.1, 0.2, 0.25, 0.3, 0.5])
    args = parser.parse_args(argv)

    rejections = {"copied": np.zeros(len(args.deltas)), "independent": np.zeros(len(args.deltas))}
    intervals = []
    for r in range(args.reps):
        ds = generate_synthetic(SynthConfig(n=args.n, d=args.d, seed=700 + r, coef_seed=2024))
        indep = corrupt_labels(ds, [args.accuracy, args.accuracy], r)
        copied = replace(indep, labels=np.repeat(indep.labels[:, :1], 2, axis=1))
        for name, data in (("copied", copied), ("independent", indep)):
            res = equivalence_permutation_test(data, EquivTestConfig(b=args.b, seed=r))
            rejections[name] += [res.p_value_at(d) <= 0.05 for d in args.deltas]
            if name == "independent":
                intervals.append(np.inf if res.equivalence_interval is None else res.equivalence_interval)

    print("delta        " + "  ".join(f"{d:6.2f}" for d in args.deltas))
    for name, counts in rejections.items():
        print(f"{name:<12} " + "  ".join(f"{c / args.reps:6.2f}" for c in counts))
    print(f"median equivalence interval (independent coders): {np.median(intervals):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

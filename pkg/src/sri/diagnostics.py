"""Checks for the coder assumptions: independence of coder errors, agreement, accuracy.

The equivalence permutation test works on the gold-coded subset.  Within
each gold stratum it measures dependence between the two coders' labels and
between the embedding and the coder pair, subtracts the margin ``delta``, and
compares the largest excess to a within-stratum permutation reference.
Small p-values support independence within the margin.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import MISSING, Dataset

LEVEL = 0.05


class DegenerateSampleWarning(UserWarning):
    pass


# -- distance correlation ----------------------------------------------------------

def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def centered_distances(x) -> np.ndarray:
    """Double-centered pairwise Euclidean distance matrix."""
    x = _as_2d(x)
    sq = np.zeros((len(x), len(x)))
    # one coordinate at a time: exact for close pairs, unlike the Gram expansion
    for col in x.T:
        sq += (col[:, None] - col[None, :]) ** 2
    d = np.sqrt(sq)
    return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()


def _dcor_centered(a, b, va=None, vb=None):
    va = (a * a).mean() if va is None else va
    vb = (b * b).mean() if vb is None else vb
    if va <= 1e-14 or vb <= 1e-14:
        return 0.0, True
    cov = max((a * b).mean(), 0.0)
    return float(np.sqrt(cov / np.sqrt(va * vb))), False


def distance_correlation(x, y) -> float:
    """Sample distance correlation in [0, 1]; 0 (with a warning) for a constant sample."""
    x, y = _as_2d(x), _as_2d(y)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("distance correlation needs two samples of equal size >= 2")
    value, degenerate = _dcor_centered(centered_distances(x), centered_distances(y))
    if degenerate:
        warnings.warn("zero-variance sample: distance correlation set to 0", DegenerateSampleWarning, stacklevel=2)
    return value


# -- PCA --------------------------------------------------------------------------

def pca_reduce(y, dims: int) -> np.ndarray:
    """Scores on the leading ``dims`` principal components of the sample covariance."""
    y = np.asarray(y, dtype=float)
    dims = min(dims, y.shape[1])
    centered = y - y.mean(axis=0)
    cov = centered.T @ centered / max(len(y) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:dims]
    basis = vecs[:, order]
    # fix the sign so the reduction is reproducible across LAPACK builds
    basis = basis * np.where(basis[np.abs(basis).argmax(axis=0), range(dims)] < 0, -1.0, 1.0)
    return centered @ basis


def one_hot(labels, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(labels, dtype=int)]


# -- equivalence permutation test ------------------------------------------------------

@dataclass(frozen=True)
class EquivTestConfig:
    """``delta`` may be None to report only the equivalence interval."""

    delta: float | None = None
    b: int = 999
    pca_dims: int = 30
    seed: int = 0
    dependence_measure: str = "dcor"

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b >= 1 required")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta >= 0 required")
        if self.pca_dims < 1:
            raise ValueError("pca_dims >= 1 required")
        if self.dependence_measure != "dcor":
            raise ValueError(f"unsupported dependence measure {self.dependence_measure!r}")


@dataclass
class EquivTestResult:
    p_value: float | None
    t_observed: float | None
    t_permuted: np.ndarray
    per_stratum: list
    equivalence_interval: float | None
    delta: float | None
    b: int
    degenerate_strata: list = field(default_factory=list)

    def p_value_at(self, delta: float) -> float:
        return _p_value(_observed_stat(self.per_stratum, delta), self.t_permuted)

    def to_dict(self) -> dict:
        return {"p_value": self.p_value, "t_observed": self.t_observed, "delta": self.delta, "b": self.b,
                "equivalence_interval": self.equivalence_interval,
                "per_stratum": self.per_stratum, "degenerate_strata": self.degenerate_strata,
                "t_permuted_quantiles": {str(q): float(np.quantile(self.t_permuted, q))
                                         for q in (0.05, 0.5, 0.95)}}


def _observed_stat(per_stratum, delta):
    excess = [max(0.0, row[key] - delta) for row in per_stratum for key in ("dcor_coders", "dcor_embedding")]
    return max(excess)


def _p_value(t_obs, t_perm):
    return float((1 + np.count_nonzero(t_perm <= t_obs)) / (len(t_perm) + 1))


def gold_subset(dataset: Dataset, coders=(0, 1)) -> np.ndarray:
    if dataset.gold is None:
        raise ValueError("the diagnostic needs gold labels on a researcher-coded subset")
    if dataset.num_coders <= max(coders):
        raise ValueError(f"need coder indices {coders}, dataset has {dataset.num_coders} coders")
    return np.flatnonzero((dataset.s == 1) & (dataset.gold != MISSING))


def equivalence_permutation_test(dataset: Dataset, config: EquivTestConfig = EquivTestConfig(),
                                 coders=(0, 1)) -> EquivTestResult:
    """Stratified permutation test of coder-error independence.

    Observed statistic: ``max over strata of max(0, dcor - delta)`` for the
    coder-vs-coder and embedding-vs-pair dependences.  The reference draws
    permute coder 2 against coder 1 and the coder pair against the embedding
    within each gold stratum, and take the same maximum without the margin.
    """
    if config.b < 19:
        warnings.warn(f"B={config.b} permutations cannot reach p <= {LEVEL}", UserWarning, stacklevel=2)
    idx = gold_subset(dataset, coders)
    gold = dataset.gold[idx]
    y_red = pca_reduce(dataset.y[idx], config.pca_dims)
    k = dataset.num_classes
    l1 = one_hot(dataset.labels[idx, coders[0]], k)
    l2 = one_hot(dataset.labels[idx, coders[1]], k)
    rng = np.random.default_rng([config.seed, 0x9E7])
    per_stratum, degenerate, perm_stats = [], [], []
    for level in sorted(set(gold.tolist())):
        rows = np.flatnonzero(gold == level)
        if len(rows) < 2:
            raise ValueError(f"stratum L={level} has {len(rows)} unit(s); at least 2 are needed")
        a_y = centered_distances(y_red[rows])
        a_1 = centered_distances(l1[rows])
        a_2 = centered_distances(l2[rows])
        a_pair = centered_distances(np.hstack([l1[rows], l2[rows]]))
        v = {name: (m * m).mean() for name, m in (("y", a_y), ("1", a_1), ("2", a_2), ("pair", a_pair))}
        d_coders, deg1 = _dcor_centered(a_1, a_2, v["1"], v["2"])
        d_embed, deg2 = _dcor_centered(a_y, a_pair, v["y"], v["pair"])
        if deg1 or deg2:
            degenerate.append(int(level))
        per_stratum.append({"stratum": int(level), "n": int(len(rows)),
                            "dcor_coders": d_coders, "dcor_embedding": d_embed})
        stats = np.empty(config.b)
        for b in range(config.b):
            p = rng.permutation(len(rows))
            s1, _ = _dcor_centered(a_1, a_2[np.ix_(p, p)], v["1"], v["2"])
            s2, _ = _dcor_centered(a_y, a_pair[np.ix_(p, p)], v["y"], v["pair"])
            stats[b] = max(s1, s2)
        perm_stats.append(stats)
    if not per_stratum:
        raise ValueError("no gold-coded units with coder labels")
    t_perm = np.max(perm_stats, axis=0)
    for row in per_stratum:
        if config.delta is not None:
            row["T_l1"] = max(0.0, row["dcor_coders"] - config.delta)
            row["T_l2"] = max(0.0, row["dcor_embedding"] - config.delta)
    t_obs = p = None
    if config.delta is not None:
        t_obs = _observed_stat(per_stratum, config.delta)
        p = _p_value(t_obs, t_perm)
    interval = _equivalence_interval(per_stratum, t_perm)
    if degenerate:
        warnings.warn(f"constant coder labels in strata {degenerate}; their distance correlations are 0",
                      DegenerateSampleWarning, stacklevel=2)
    return EquivTestResult(p, t_obs, t_perm, per_stratum, interval, config.delta, config.b, degenerate)


def _equivalence_interval(per_stratum, t_perm, tol=1e-9):
    """Smallest margin (to ``tol``) at which the test rejects at level 0.05, by bisection.

    The p-value is nonincreasing in the margin, so bisection on
    [0, largest observed dependence] is exact up to the tolerance.
    """
    hi = max(max(r["dcor_coders"], r["dcor_embedding"]) for r in per_stratum)
    if _p_value(_observed_stat(per_stratum, hi), t_perm) > LEVEL:
        return None
    if _p_value(_observed_stat(per_stratum, 0.0), t_perm) <= LEVEL:
        return 0.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _p_value(_observed_stat(per_stratum, mid), t_perm) <= LEVEL:
            hi = mid
        else:
            lo = mid
    return hi


# -- agreement and accuracy -------------------------------------------------------------

def agreement_check(dataset: Dataset, strata=None, pool_t: bool = False, coders=(0, 1)) -> list[dict]:
    """Coder agreement per (class, T, stratum) among labeled units.

    ``rate`` is the joint frequency P(L1 = L2 = l, T = t | stratum, S = 1)
    and passes when strictly above 0.5 (``borderline`` flags exactly 0.5).
    With ``pool_t`` the frequency is taken over both predictor levels.
    ``dominance_rate`` is P(L1 = l | L2 = l, T = t, stratum, S = 1), the
    share of coder 2's class-l labels that coder 1 matches; it is reported
    alongside because the joint frequency cannot exceed 0.5 for two classes
    at once.
    """
    lab = dataset.labeled
    keys = np.zeros(dataset.n, dtype=np.int64) if strata is None else np.asarray(strata)
    l1 = dataset.labels[:, coders[0]]
    l2 = dataset.labels[:, coders[1]]
    rows = []
    t_levels = [None] if pool_t else [0, 1]
    for g in sorted(set(keys[lab].tolist())):
        in_g = lab[keys[lab] == g]
        for level in range(dataset.num_classes):
            for tv in t_levels:
                cell = in_g if tv is None else in_g[dataset.t[in_g] == tv]
                row = {"stratum": g, "label": level, "t": tv, "n": int(len(in_g)), "n_cell": int(len(cell))}
                if len(cell) == 0:
                    row.update(rate=None, passed=None, borderline=None, evaluable=False)
                else:
                    agree = np.count_nonzero((l1[cell] == level) & (l2[cell] == level))
                    rate = agree / len(in_g)
                    row.update(rate=rate, passed=bool(rate > 0.5), borderline=bool(rate == 0.5), evaluable=True)
                said = cell[l2[cell] == level]
                if len(said):
                    dom = float(np.mean(l1[said] == level))
                    row.update(dominance_rate=dom, dominance_passed=bool(dom > 0.5))
                else:
                    row.update(dominance_rate=None, dominance_passed=None)
                rows.append(row)
    return rows


def accuracy_check(dataset: Dataset, coder: int = 0) -> dict:
    """Confusion matrix of one coder against gold, rows conditional on the gold class."""
    idx = gold_subset(dataset, (coder,))
    k = dataset.num_classes
    counts = np.zeros((k, k))
    np.add.at(counts, (dataset.gold[idx], dataset.labels[idx, coder]), 1.0)
    totals = counts.sum(axis=1)
    conf = np.full((k, k), np.nan)
    seen = totals > 0
    conf[seen] = counts[seen] / totals[seen, None]
    passed = [bool(conf[c, c] > 0.5) if seen[c] else None for c in range(k)]
    return {"coder": coder, "confusion": conf, "counts": counts, "passed": passed,
            "evaluable": seen.tolist()}


def diagnose(dataset: Dataset, delta: float | None, b: int = 999, seed: int = 0, pca_dims: int = 30,
             strata=None) -> dict:
    """Full assumption report for two coders (the ``diagnose`` CLI payload)."""
    report = {"num_gold": int(len(gold_subset(dataset)))}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        test = equivalence_permutation_test(dataset, EquivTestConfig(delta, b, pca_dims, seed))
    report["equivalence_test"] = test.to_dict()
    report["agreement"] = agreement_check(dataset, strata)
    report["agreement_pooled"] = agreement_check(dataset, strata, pool_t=True)
    report["accuracy"] = []
    for j in (0, 1):
        acc = accuracy_check(dataset, j)
        acc["confusion"] = [[None if np.isnan(v) else float(v) for v in row] for row in acc["confusion"]]
        acc["counts"] = acc["counts"].tolist()
        report["accuracy"].append(acc)
    report["warnings"] = [str(w.message) for w in caught]
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)

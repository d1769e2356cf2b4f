"""Coder confusion-matrix recovery from two conditionally independent coders.

With ``A1``, ``A2`` the column-stochastic confusion matrices
(``A[l, c] = P(coder label = l | true label = c)``), the coder-pair joint
tables factor as::

    M(t) = A1 diag(P(T=t | L) * P(L)) A2^T        M = A1 diag(P(L)) A2^T

so ``M(t) M^{-1} = A1 diag(P(T=t|L)) A1^{-1}`` and
``M(t)^T M^{-T} = A2 diag(P(T=t|L)) A2^{-1}``.  Eigenvectors give the
columns of ``A1`` and ``A2``; column sums fix the scale and the
largest-entry-on-the-diagonal rule fixes the order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import MISSING, Dataset
from .linalg import DegenerateEigenvalues, NonRealDecomposition, eig_real

COND_LIMIT = 1e8
DENOM_MIN = 1e-3


class LabelModelError(ValueError):
    pass


@dataclass
class JointMatrices:
    """Per-stratum coder-pair frequency tables over labeled units.

    ``m_t[g, t]`` is P(L1=l, L2=m, T=t | stratum g), ``m[g]`` the same
    marginalized over T, and ``b_t[g, t]`` is P(L1=l, L2=m | T=t, stratum g).
    ``counts[g, t]`` holds the raw cell counts.
    """

    strata: list
    m_t: np.ndarray
    m: np.ndarray
    b_t: np.ndarray
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.m.shape[-1]


def build_joint_matrices(dataset: Dataset, strata=None, coders=(0, 1), idx=None) -> JointMatrices:
    """Tabulate coder pairs among labeled units (optionally restricted to ``idx``).

    ``strata`` is an optional per-unit array of discrete stratum keys; without
    it all labeled units form one stratum.
    """
    if len(coders) != 2:
        raise LabelModelError("exactly two coders are decomposed at a time")
    if dataset.num_coders <= max(coders):
        raise LabelModelError(f"dataset has {dataset.num_coders} coders, need indices {coders}")
    sel = np.arange(dataset.n) if idx is None else np.asarray(idx)
    sel = sel[dataset.s[sel] == 1]
    keys = np.zeros(dataset.n, dtype=np.int64) if strata is None else np.asarray(strata)
    levels = sorted(set(keys[sel].tolist())) if len(sel) else [0]
    k = dataset.num_classes
    l1 = dataset.labels[sel, coders[0]]
    l2 = dataset.labels[sel, coders[1]]
    t = dataset.t[sel]
    g_of = keys[sel]
    counts = np.zeros((len(levels), 2, k, k))
    for gi, g in enumerate(levels):
        in_g = g_of == g
        for tv in (0, 1):
            cell = in_g & (t == tv)
            if not cell.any():
                raise LabelModelError(f"no labeled units in cell (stratum={g}, t={tv})")
            np.add.at(counts[gi, tv], (l1[cell], l2[cell]), 1.0)
    totals = counts.sum(axis=(1, 2, 3))
    m_t = counts / totals[:, None, None, None]
    m = m_t.sum(axis=1)
    b_t = counts / counts.sum(axis=(2, 3))[:, :, None, None]
    return JointMatrices(levels, m_t, m, b_t, counts)


@dataclass
class CoderErrorModel:
    """Recovered confusion matrices ``a[j]`` (column-stochastic) for two coders.

    ``class_prior`` is the recovered marginal P(L = c) pooled over strata.
    """

    a: np.ndarray
    class_prior: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.a.shape[-1]

    @property
    def valid(self) -> bool:
        return bool((np.diagonal(self.a, axis1=1, axis2=2) > 0.5).all())

    def off_class_rate(self, j: int, c: int) -> float:
        """P(coder j says c | L != c), weighting wrong classes by the class prior."""
        others = [l for l in range(self.num_classes) if l != c]
        w = self.class_prior[others]
        if w.sum() <= 0:
            w = np.ones(len(others))
        return float(self.a[j, c, others] @ w / w.sum())

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return json.dumps({"a": self.a.tolist(), "class_prior": self.class_prior.tolist(),
                           "valid": self.valid, "diagnostics": clean(self.diagnostics)}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CoderErrorModel":
        doc = json.loads(text)
        return cls(np.array(doc["a"], dtype=float), np.array(doc["class_prior"], dtype=float),
                   doc.get("diagnostics", {}))

    @classmethod
    def identity(cls, num_classes: int, class_prior=None) -> "CoderErrorModel":
        prior = np.full(num_classes, 1.0 / num_classes) if class_prior is None else np.asarray(class_prior, float)
        return cls(np.stack([np.eye(num_classes)] * 2), prior)


def _columns_from_eigvecs(vecs: np.ndarray, vals: np.ndarray, who: str):
    sums = vecs.sum(axis=0)
    if np.any(np.abs(sums) < 1e-12):
        raise LabelModelError(f"{who}: eigenvector with zero column sum, cannot fix scale")
    cols = vecs / sums
    owner = cols.argmax(axis=0)
    if len(set(owner.tolist())) != cols.shape[1]:
        raise LabelModelError(f"{who}: dominant-diagonal assumption violated (no permutation makes the diagonal dominant)")
    a = np.empty_like(cols)
    lam = np.empty_like(vals)
    a[:, owner] = cols
    lam[owner] = vals
    return a, lam


def _check_invertible(mat, label):
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise LabelModelError(f"{label} is near-singular (condition number {cond:.3g})")


def recover_error_matrices(jm: JointMatrices, method: str = "auto") -> CoderErrorModel:
    """Eigendecomposition recovery, averaged with equal weights over t and strata."""
    k = jm.num_classes
    a1_est, a2_est, priors = [], [], []
    max_eig_mismatch = 0.0
    min_gap = np.inf
    for gi, g in enumerate(jm.strata):
        m = jm.m[gi]
        _check_invertible(m, f"joint table M (stratum {g})")
        m_inv = np.linalg.inv(m)
        for tv in (0, 1):
            mt = jm.m_t[gi, tv]
            try:
                vals1, vecs1 = eig_real(mt @ m_inv, method)
                vals2, vecs2 = eig_real(mt.T @ m_inv.T, method)
            except NonRealDecomposition as exc:
                raise LabelModelError(f"non-real decomposition (stratum {g}, t={tv}): {exc}") from None
            except DegenerateEigenvalues as exc:
                raise LabelModelError(f"degenerate eigenvalues (stratum {g}, t={tv}): {exc}") from None
            a1, lam1 = _columns_from_eigvecs(vecs1, vals1, f"coder 1 (stratum {g}, t={tv})")
            a2, lam2 = _columns_from_eigvecs(vecs2, vals2, f"coder 2 (stratum {g}, t={tv})")
            a1_est.append(a1)
            a2_est.append(a2)
            max_eig_mismatch = max(max_eig_mismatch, float(np.abs(lam1 - lam2).max()))
            if k > 1:
                gaps = np.abs(vals1[:, None] - vals1[None, :])[np.triu_indices(k, 1)]
                min_gap = min(min_gap, float(gaps.min()))
    a1 = np.mean(a1_est, axis=0)
    a2 = np.mean(a2_est, axis=0)
    a = np.stack([a1, a2])
    for j in range(2):
        _check_invertible(a[j], f"confusion matrix of coder {j + 1}")
    weights = jm.counts.sum(axis=(1, 2, 3))
    raw_priors = []
    for gi in range(len(jm.strata)):
        d = np.diag(np.linalg.solve(a1, np.linalg.solve(a2, jm.m[gi].T).T))
        raw_priors.append(d)
        priors.append(_clip_renorm(d))
    prior = np.average(np.array(priors), axis=0, weights=weights)
    diag = np.diagonal(a, axis1=1, axis2=2)
    diagnostics = {
        "min_eigen_gap": float(min_gap) if np.isfinite(min_gap) else None,
        "max_eigenvalue_mismatch": max_eig_mismatch,
        "diagonal_margin": (diag - 0.5).tolist(),
        "min_entry": float(a.min()),
        "raw_class_prior": np.array(raw_priors).tolist(),
        "spread_over_t_and_strata": float(np.abs(np.array(a1_est) - a1).max()),
    }
    return CoderErrorModel(a, prior, diagnostics)


def _clip_renorm(v):
    v = np.clip(v, 0.0, 1.0)
    total = v.sum()
    return v / total if total > 0 else np.full(len(v), 1.0 / len(v))


@dataclass
class ThetaEstimate:
    """``theta[g, t, c]`` = P(L = c | T = t, stratum g), clipped and renormalized."""

    strata: list
    theta: np.ndarray
    raw: np.ndarray


def recover_theta(jm: JointMatrices, cem: CoderErrorModel) -> ThetaEstimate:
    a1_inv = np.linalg.inv(cem.a[0])
    a2_inv = np.linalg.inv(cem.a[1])
    raw = np.empty((len(jm.strata), 2, jm.num_classes))
    for gi in range(len(jm.strata)):
        for tv in (0, 1):
            raw[gi, tv] = np.diag(a1_inv @ jm.b_t[gi, tv] @ a2_inv.T)
    theta = np.apply_along_axis(_clip_renorm, -1, raw)
    return ThetaEstimate(list(jm.strata), theta, raw)


def _coder_factor(labels, cem: CoderErrorModel, j: int, c: int):
    hit = cem.a[j, c, c]
    miss = cem.off_class_rate(j, c)
    denom = hit - miss
    if denom <= DENOM_MIN:
        raise LabelModelError(f"uninformative coder {j + 1} for class {c} "
                              f"(P(hit) - P(false alarm) = {denom:.3g})")
    return ((np.asarray(labels) == c).astype(float) - miss) / denom


def surrogate_outcome(l1, l2, cem: CoderErrorModel, c: int):
    """Product of the two coders' debiased indicators of class ``c``.

    Scalars in, scalar out; arrays are handled elementwise.
    """
    out = _coder_factor(l1, cem, 0, c) * _coder_factor(l2, cem, 1, c)
    return float(out) if np.ndim(out) == 0 else out


def surrogate_outcomes(l1, l2, cem: CoderErrorModel) -> np.ndarray:
    """(n, C+1) matrix of surrogate outcomes for every class."""
    l1 = np.asarray(l1)
    l2 = np.asarray(l2)
    if (l1 == MISSING).any() or (l2 == MISSING).any():
        raise LabelModelError("surrogate outcomes need both coder labels")
    return np.stack([surrogate_outcome(l1, l2, cem, c) for c in range(cem.num_classes)], axis=1)


def expected_surrogate(cem: CoderErrorModel, c: int, true_label: int, a_true=None) -> float:
    """Exact E[M_c | L = true_label] when coders follow ``a_true`` (default: ``cem.a``)."""
    a_true = cem.a if a_true is None else a_true
    k = cem.num_classes
    total = 0.0
    for l1 in range(k):
        for l2 in range(k):
            w = a_true[0, l1, true_label] * a_true[1, l2, true_label]
            total += w * surrogate_outcome(l1, l2, cem, c)
    return total


def population_tables(a1, a2, class_prior, p_t1_given_l, strata_priors=None) -> JointMatrices:
    """Exact joint tables implied by known parameters (single stratum unless ``strata_priors``)."""
    a1 = np.asarray(a1, float)
    a2 = np.asarray(a2, float)
    priors = [np.asarray(class_prior, float)] if strata_priors is None else [np.asarray(p, float) for p in strata_priors]
    pt1 = np.asarray(p_t1_given_l, float)
    k = a1.shape[0]
    m_t = np.empty((len(priors), 2, k, k))
    b_t = np.empty_like(m_t)
    for gi, prior in enumerate(priors):
        for tv, pt in ((0, 1 - pt1), (1, pt1)):
            m_t[gi, tv] = a1 @ np.diag(pt * prior) @ a2.T
            theta = pt * prior / (pt * prior).sum()
            b_t[gi, tv] = a1 @ np.diag(theta) @ a2.T
    m = m_t.sum(axis=1)
    counts = m_t * 1e6
    return JointMatrices(list(range(len(priors))), m_t, m, b_t, counts)

"""Cross-fitted influence-function estimators and the baseline estimators.

All estimators return an :class:`Estimate` carrying per-unit influence
values for both predictor levels, so standard errors are always
``sqrt(mean(psi**2) / n)`` and confidence intervals are ``+-1.96 se``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dataset import Dataset, split_folds
from .labelmodel import (LabelModelError, build_joint_matrices,
                         recover_error_matrices, surrogate_outcomes)
from .network import NetworkConfig, forward, make_batch, train

Z_CRIT = 1.96
DEFAULT_CLAMP = 0.01


class EstimationError(ValueError):
    pass


# -- nuisance models ----------------------------------------------------------

@dataclass
class PropensityModel:
    """Logistic model for P(T=1 | Z); ``coef[0]`` is the intercept."""

    coef: np.ndarray
    clamp: float = DEFAULT_CLAMP

    def predict(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        z = z.reshape(len(z), len(self.coef) - 1) if z.ndim else z.reshape(1, -1)
        eta = self.coef[0] + z @ self.coef[1:]
        p = 0.5 * (1.0 + np.tanh(0.5 * eta))
        return np.clip(p, self.clamp, 1 - self.clamp)


def _logistic_irls(x, t, max_iter=100, tol=1e-10, ridge=1e-8):
    """Newton-Raphson for the logistic likelihood; a tiny ridge keeps separable data finite."""
    beta = np.zeros(x.shape[1])
    for _ in range(max_iter):
        eta = np.clip(x @ beta, -40, 40)
        p = 1.0 / (1.0 + np.exp(-eta))
        w = p * (1 - p)
        grad = x.T @ (t - p) - ridge * beta
        hess = (x * w[:, None]).T @ x + ridge * np.eye(x.shape[1])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    return beta


def fit_propensity(dataset: Dataset, idx=None, clamp: float = DEFAULT_CLAMP) -> PropensityModel:
    idx = np.arange(dataset.n) if idx is None else np.asarray(idx)
    t = dataset.t[idx].astype(float)
    if len(t) == 0 or t.min() == t.max():
        raise EstimationError("propensity needs both predictor values in the training data")
    if dataset.p == 0:
        frac = t.mean()
        return PropensityModel(np.array([np.log(frac / (1 - frac))]), clamp)
    x = np.hstack([np.ones((len(idx), 1)), dataset.z[idx]])
    return PropensityModel(_logistic_irls(x, t), clamp)


@dataclass
class LinearModel:
    """``coef[0] + z @ coef[1:]``; per outcome column when ``coef`` is 2-D."""

    coef: np.ndarray

    def predict(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x = np.hstack([np.ones((len(z), 1)), z.reshape(len(z), -1)])
        return x @ self.coef


def fit_mbar(outcome_pred, z, t, level: int) -> LinearModel:
    """Least squares of the outcome-model predictions on Z among units with T = ``level``."""
    outcome_pred = np.asarray(outcome_pred, dtype=float)
    z = np.asarray(z, dtype=float).reshape(len(outcome_pred), -1)
    sel = np.asarray(t) == level
    if not sel.any():
        raise EstimationError(f"no units with T={level} in the split used for the adjustment regression")
    x = np.hstack([np.ones((int(sel.sum()), 1)), z[sel]])
    coef, *_ = np.linalg.lstsq(x, outcome_pred[sel], rcond=None)
    return LinearModel(coef)


# Outcome/score models are produced by a "fitter": a callable taking
# (batch, variant, num_classes, num_coders, seed) and returning a predictor
# (y, z) -> (outcome, score for T=1).  The default trains the joint network.

Predictor = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass
class NetworkFitter:
    config: NetworkConfig = field(default_factory=NetworkConfig)
    reports: list = field(default_factory=list)

    def __call__(self, batch, variant, num_classes, num_coders, seed) -> Predictor:
        net = train(batch, replace(self.config, seed=seed), variant, num_classes, num_coders)
        self.reports.append(net.train_report)

        def predict(y, z):
            out = forward(net, y, z)
            return out.outcome, out.surrogacy_score

        return predict


# -- influence functions ------------------------------------------------------

def eif_terms(s, t, outcome, mu, rho1, pi1, mbar, s_prob, level):
    """The influence function without its ``- Psi_t`` term, elementwise.

    ``outcome`` is the labeled outcome (or a surrogate outcome) and may hold
    anything on rows with ``s == 0``.
    """
    s = np.asarray(s, dtype=float)
    rho = rho1 if level == 1 else 1 - np.asarray(rho1)
    pi = pi1 if level == 1 else 1 - np.asarray(pi1)
    resid = np.where(s > 0, np.nan_to_num(np.asarray(outcome, dtype=float)) - mu, 0.0)
    treated = (np.asarray(t) == level).astype(float)
    return s / s_prob * rho / pi * resid + treated / pi * (mu - mbar) + mbar


def eif_perfect(s, t, label, mu, rho1, pi1, mbar, s_prob, level, psi):
    """Influence value of one unit (or many) for the perfectly annotated outcome mean."""
    return eif_terms(s, t, label, mu, rho1, pi1, mbar, s_prob, level) - psi


def eif_noisy(s, t, surrogate, mu_c, rho1, pi1, mbar_c, s_prob, level, psi_c):
    """Influence value for the class-``c`` mean with the surrogate outcome as the target."""
    return eif_terms(s, t, surrogate, mu_c, rho1, pi1, mbar_c, s_prob, level) - psi_c


# -- estimates ----------------------------------------------------------------

@dataclass
class Estimate:
    """Point estimates for T=0 and T=1 with per-unit influence values (n, 2)."""

    estimator: str
    psi: np.ndarray
    influence: np.ndarray
    k: int | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.influence.shape[0]

    @property
    def diff(self) -> float:
        return float(self.psi[1] - self.psi[0])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt((self.influence**2).mean(axis=0) / self.n)

    @property
    def diff_influence(self) -> np.ndarray:
        return self.influence[:, 1] - self.influence[:, 0]

    @property
    def se_diff(self) -> float:
        return float(np.sqrt((self.diff_influence**2).mean() / self.n))

    @property
    def ci(self) -> tuple[float, float]:
        return self.diff - Z_CRIT * self.se_diff, self.diff + Z_CRIT * self.se_diff

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {"estimator": self.estimator, "psi_0": float(self.psi[0]), "psi_1": float(self.psi[1]),
                "diff": self.diff, "se_diff": self.se_diff, "ci_low": lo, "ci_high": hi,
                "n": self.n, "k": self.k, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _solve(terms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form root of the linear estimating equation: mean of the terms."""
    psi = terms.mean(axis=0)
    return psi, terms - psi


# -- cross-fitted estimators ----------------------------------------------------

def _halves(idx, rng):
    idx = rng.permutation(idx)
    cut = (len(idx) + 1) // 2
    return np.sort(idx[:cut]), np.sort(idx[cut:])


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def _check_training(dataset, train_idx, fold):
    if not (dataset.s[train_idx] == 1).any():
        raise EstimationError(f"fold {fold}: cannot fit outcome head, no labeled units in the training portion")
    tvals = dataset.t[train_idx]
    if tvals.min() == tvals.max():
        raise EstimationError(f"fold {fold}: training portion has only T={tvals[0]}")


def _adjustment_split(dataset, train_idx, rng):
    """Unlabeled training units split in halves: (network half, regression half).

    With no unlabeled training units both halves fall back to the whole
    training portion so fully annotated data remain estimable.
    """
    unl = train_idx[dataset.s[train_idx] == 0]
    if len(unl) < 2:
        return np.empty(0, dtype=np.int64), train_idx
    return _halves(unl, rng)


def _mbar_predictions(pred_split, z_split, t_split, z_held):
    out = {}
    for level in (0, 1):
        out[level] = fit_mbar(pred_split, z_split, t_split, level).predict(z_held)
    return out


def sri_perfect(dataset: Dataset, k: int = 2, net_config: NetworkConfig | None = None, seed: int = 0,
                fitter=None, clamp: float = DEFAULT_CLAMP, coder: int = 0) -> Estimate:
    """Cross-fitted estimate of both outcome means with labels taken as exact."""
    if k < 2:
        raise EstimationError("cross-fitting needs k >= 2")
    if not (dataset.s == 1).any():
        raise EstimationError("cannot fit outcome head: the data have no labeled units")
    fitter = fitter or NetworkFitter(net_config or NetworkConfig())
    folds = split_folds(dataset.n, k, seed)
    s_prob = float(dataset.s.mean())
    label = np.where(dataset.s == 1, dataset.labels[:, coder], 0).astype(float)
    terms = np.empty((dataset.n, 2))
    for fold in range(k):
        held, train_idx = folds.indices(fold), folds.complement(fold)
        _check_training(dataset, train_idx, fold)
        prop = fit_propensity(dataset, train_idx, clamp)
        net_unl, reg_idx = _adjustment_split(dataset, train_idx, np.random.default_rng([seed, fold, 1]))
        net_idx = np.sort(np.concatenate([train_idx[dataset.s[train_idx] == 1], net_unl]))
        batch = make_batch(_with_coder(dataset, coder), net_idx)
        predict = fitter(batch, "perfect", dataset.num_classes, 0, _fold_seed(seed, fold))
        mu_reg, _ = predict(dataset.y[reg_idx], dataset.z[reg_idx])
        mbar = _mbar_predictions(mu_reg, dataset.z[reg_idx], dataset.t[reg_idx], dataset.z[held])
        mu, rho1 = predict(dataset.y[held], dataset.z[held])
        pi1 = prop.predict(dataset.z[held])
        for level in (0, 1):
            terms[held, level] = eif_terms(dataset.s[held], dataset.t[held], label[held], mu, rho1, pi1,
                                           mbar[level], s_prob, level)
    psi, infl = _solve(terms)
    return Estimate("sri", psi, infl, k, seed, {"s_prob": s_prob})


def _with_coder(dataset: Dataset, coder: int) -> Dataset:
    if coder == 0:
        return dataset
    order = [coder] + [j for j in range(dataset.num_coders) if j != coder]
    return replace(dataset, labels=dataset.labels[:, order])


def sri_noisy(dataset: Dataset, k: int = 5, net_config: NetworkConfig | None = None, seed: int = 0,
              fitter=None, clamp: float = DEFAULT_CLAMP, strata=None, coders=(0, 1),
              eig_method: str = "auto") -> Estimate:
    """Cross-fitted estimate from two error-prone coders via surrogate outcomes.

    Within each training portion the labeled units are halved: the first half
    recovers the coder confusion matrices, the second trains the outcome heads
    on surrogate outcomes.  Class means are combined as ``sum_c c * Psi_{t,c}``.
    """
    if k < 2:
        raise EstimationError("cross-fitting needs k >= 2")
    if dataset.num_coders < 2:
        raise EstimationError("the noisy-annotation estimator needs two coders")
    if not (dataset.s == 1).any():
        raise EstimationError("cannot fit outcome head: the data have no labeled units")
    fitter = fitter or NetworkFitter(net_config or NetworkConfig())
    folds = split_folds(dataset.n, k, seed)
    s_prob = float(dataset.s.mean())
    n_cls = dataset.num_classes
    pair = dataset.labels[:, list(coders)]
    pair_ds = replace(dataset, labels=pair)
    lab = dataset.s == 1
    weights = np.arange(n_cls, dtype=float)
    terms = np.empty((dataset.n, 2, n_cls))
    models = []
    for fold in range(k):
        held, train_idx = folds.indices(fold), folds.complement(fold)
        _check_training(dataset, train_idx, fold)
        prop = fit_propensity(dataset, train_idx, clamp)
        net_unl, reg_idx = _adjustment_split(dataset, train_idx, np.random.default_rng([seed, fold, 1]))
        first, second = _halves(train_idx[lab[train_idx]], np.random.default_rng([seed, fold, 2]))
        try:
            jm = build_joint_matrices(pair_ds, strata, (0, 1), first)
            cem = recover_error_matrices(jm, eig_method)
            surrogate = np.zeros((dataset.n, n_cls))
            surrogate[lab] = surrogate_outcomes(pair[lab, 0], pair[lab, 1], cem)
        except LabelModelError as exc:
            raise LabelModelError(f"fold {fold}: {exc}") from None
        models.append(cem)
        if len(second) == 0:
            raise EstimationError(f"fold {fold}: cannot fit outcome head, no labeled units left after halving")
        net_idx = np.sort(np.concatenate([second, net_unl]))
        batch = make_batch(pair_ds, net_idx, surrogate)
        predict = fitter(batch, "noisy", n_cls, 2, _fold_seed(seed, fold))
        mu_reg, _ = predict(dataset.y[reg_idx], dataset.z[reg_idx])
        mu, rho1 = predict(dataset.y[held], dataset.z[held])
        pi1 = prop.predict(dataset.z[held])
        for c in range(n_cls):
            mbar = _mbar_predictions(mu_reg[:, c], dataset.z[reg_idx], dataset.t[reg_idx], dataset.z[held])
            for level in (0, 1):
                terms[held, level, c] = eif_terms(dataset.s[held], dataset.t[held], surrogate[held, c],
                                                  mu[:, c], rho1, pi1, mbar[level], s_prob, level)
    class_psi = terms.mean(axis=0)
    class_infl = terms - class_psi
    psi = class_psi @ weights
    infl = class_infl @ weights
    return Estimate("sri-noisy", psi, infl, k, seed,
                    {"s_prob": s_prob, "class_psi": class_psi, "class_influence": class_infl,
                     "coder_models": models})


# -- baselines --------------------------------------------------------------------

def _group_masks(dataset: Dataset):
    masks = [dataset.t == level for level in (0, 1)]
    for level, m in enumerate(masks):
        if not m.any():
            raise EstimationError(f"no units with T={level}")
    return masks


def _check_preds(dataset, preds):
    preds = np.asarray(preds, dtype=float)
    if preds.shape != (dataset.n,):
        raise EstimationError(f"need one prediction per unit ({dataset.n}), got shape {preds.shape}")
    return preds


def naive_estimate(dataset: Dataset, machine_preds) -> Estimate:
    """Difference in mean predictions between predictor groups."""
    h = _check_preds(dataset, machine_preds)
    n = dataset.n
    psi = np.empty(2)
    infl = np.zeros((n, 2))
    for level, m in enumerate(_group_masks(dataset)):
        psi[level] = h[m].mean()
        infl[m, level] = (h[m] - psi[level]) * n / m.sum()
    return Estimate("naive", psi, infl)


def _corrected(dataset, machine_preds, coder, first_term_mask, name):
    h = _check_preds(dataset, machine_preds)
    n = dataset.n
    lab = dataset.s == 1
    label = np.where(lab, dataset.labels[:, coder], 0).astype(float)
    psi = np.empty(2)
    infl = np.zeros((n, 2))
    for level, m in enumerate(_group_masks(dataset)):
        first = m & first_term_mask
        corr = m & lab
        if not corr.any():
            raise EstimationError(f"no labeled units with T={level} (n_t = 0)")
        if not first.any():
            raise EstimationError(f"{name}: no units available for the prediction mean at T={level}")
        h_bar = h[first].mean()
        d = h - label
        d_bar = d[corr].mean()
        psi[level] = h_bar - d_bar
        infl[first, level] += (h[first] - h_bar) * n / first.sum()
        infl[corr, level] -= (d[corr] - d_bar) * n / corr.sum()
    return Estimate(name, psi, infl)


def dsl_estimate(dataset: Dataset, machine_preds, coder: int = 0) -> Estimate:
    """Group mean of predictions minus the labeled group-mean prediction error."""
    return _corrected(dataset, machine_preds, coder, np.ones(dataset.n, dtype=bool), "dsl")


def ppi_estimate(dataset: Dataset, machine_preds, coder: int = 0) -> Estimate:
    """Unlabeled group mean of predictions minus the labeled group-mean prediction error."""
    return _corrected(dataset, machine_preds, coder, dataset.s == 0, "ppi")


ESTIMATORS = ("sri", "sri-noisy", "naive", "ppi", "dsl")

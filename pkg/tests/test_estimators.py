from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sri.dataset import Dataset, SynthConfig, corrupt_labels, flip_labels, generate_synthetic, sample_annotations
from sri.estimators import (Estimate, EstimationError, NetworkFitter, dsl_estimate, eif_noisy, eif_perfect,
                            fit_mbar, fit_propensity, naive_estimate, ppi_estimate, sri_noisy, sri_perfect)
from sri.network import NetworkConfig

FAST_NET = NetworkConfig(trunk_dims=(16, 8), head_dims=(8, 1), learning_rate=3e-3, max_epochs=60)


def tiny_dataset(t, s, labels, z=None, y=None):
    t = np.asarray(t)
    n = len(t)
    labels = np.asarray(labels).reshape(n, -1)
    return Dataset(t=t, y=np.zeros((n, 1)) if y is None else y, z=np.zeros((n, 0)) if z is None else z,
                   s=np.asarray(s), labels=labels)


# -- nuisance models ---------------------------------------------------------------

def test_propensity_without_covariates():
    ds = tiny_dataset([1] * 6 + [0] * 4, [0] * 10, [[-1]] * 10)
    np.testing.assert_allclose(fit_propensity(ds).predict(np.zeros((3, 0))), 0.6)


def test_propensity_clamped_on_separable_covariate():
    z = np.linspace(-1, 1, 40)[:, None]
    t = (z[:, 0] > 0).astype(int)
    model = fit_propensity(tiny_dataset(t, [0] * 40, [[-1]] * 40, z=z), clamp=0.01)
    p = model.predict(np.array([[1.0], [-1.0]]))
    np.testing.assert_allclose(p, [0.99, 0.01])


def test_propensity_recovers_logistic_coefficients(rng):
    z = rng.normal(size=(10_000, 1))
    t = (rng.random(10_000) < 1 / (1 + np.exp(-(0.3 + 1.2 * z[:, 0])))).astype(int)
    model = fit_propensity(tiny_dataset(t, [0] * 10_000, [[-1]] * 10_000, z=z))
    np.testing.assert_allclose(model.coef, [0.3, 1.2], atol=0.1)


def test_propensity_needs_both_levels():
    with pytest.raises(EstimationError):
        fit_propensity(tiny_dataset([1, 1, 1], [0, 0, 0], [[-1]] * 3))


def test_mbar_without_covariates():
    pred = np.array([0.2, 0.4, 0.9, 0.1])
    t = np.array([1, 1, 0, 0])
    assert fit_mbar(pred, np.zeros((4, 0)), t, 1).predict(np.zeros((1, 0)))[0] == pytest.approx(0.3)


def test_mbar_constant_prediction(rng):
    z = rng.normal(size=(50, 2))
    model = fit_mbar(np.full(50, 0.7), z, np.ones(50, int), 1)
    np.testing.assert_allclose(model.predict(rng.normal(size=(5, 2))), 0.7, atol=1e-12)


def test_mbar_exact_linear_fit(rng):
    z = rng.normal(size=(40, 1))
    model = fit_mbar(2 + 3 * z[:, 0], z, np.zeros(40, int), 0)
    np.testing.assert_allclose(model.coef, [2, 3], atol=1e-8)


def test_mbar_needs_units():
    with pytest.raises(EstimationError):
        fit_mbar(np.ones(3), np.zeros((3, 0)), np.zeros(3, int), 1)


# -- influence functions --------------------------------------------------------------

def test_eif_hand_value():
    val = eif_perfect(s=1, t=1, label=1.0, mu=0.6, rho1=0.5, pi1=0.5, mbar=0.5, s_prob=0.5, level=1, psi=0.4)
    assert val == pytest.approx(1.1, abs=1e-12)


def test_eif_vanishes_when_residuals_do():
    assert eif_perfect(1, 0, 0.3, 0.3, 0.4, 0.6, 0.25, 0.2, 1, 0.25) == 0.0


def test_eif_noisy_hand_value():
    # same arithmetic with a surrogate outcome of 1.265625 for class 1 at t=0
    val = eif_noisy(s=1, t=0, surrogate=1.265625, mu_c=0.5, rho1=0.25, pi1=0.5, mbar_c=0.4, s_prob=0.25,
                    level=0, psi_c=0.45)
    expected = 4 * (0.75 / 0.5) * 0.765625 + (0.5 - 0.4) / 0.5 + 0.4 - 0.45
    assert val == pytest.approx(expected, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), level=st.sampled_from([0, 1]))
def test_identity_surrogate_reduces_to_indicator(seed, level):
    rng = np.random.default_rng(seed)
    n = 30
    s, t = rng.integers(0, 2, n), rng.integers(0, 2, n)
    lab = rng.integers(0, 2, n)
    mu, rho, pi, mbar = rng.random(n), rng.random(n) * 0.9 + 0.05, rng.random(n) * 0.9 + 0.05, rng.random(n)
    # with perfect coders the class-1 surrogate outcome is the indicator of class 1
    indicator = (lab == 1).astype(float)
    a = eif_noisy(s, t, indicator, mu, rho, pi, mbar, 0.3, level, 0.2)
    b = eif_perfect(s, t, indicator, mu, rho, pi, mbar, 0.3, level, 0.2)
    np.testing.assert_array_equal(a, b)


# -- fixed nuisances for exact identities --------------------------------------------------

class FixedFitter:
    """Ignores the training data; outcome and score are fixed functions of y."""

    def __init__(self, outcome=None, score=None):
        self.outcome = outcome or (lambda y: 1 / (1 + np.exp(-y[:, 0])))
        self.score = score or (lambda y: 1 / (1 + np.exp(-0.5 * y[:, 1])))

    def __call__(self, batch, variant, num_classes, num_coders, seed):
        def predict(y, z):
            mu = self.outcome(y)
            if variant == "noisy":
                mu = np.stack([1 - mu, mu], axis=1)
            return mu, self.score(y)

        return predict


def small_design(n=800, d=4, seed=0, frac=0.3, accs=(1.0, 1.0)):
    ds = generate_synthetic(SynthConfig(n=n, d=d, seed=seed, coef_seed=0))
    return sample_annotations(corrupt_labels(ds, list(accs), seed + 1), frac, seed + 2)


def test_identity_coders_reduce_to_perfect():
    ds = small_design(n=3000, d=8, frac=0.5)
    fitter = FixedFitter()
    perfect = sri_perfect(ds, 5, seed=3, fitter=fitter)
    noisy = sri_noisy(ds, 5, seed=3, fitter=fitter)
    np.testing.assert_allclose(noisy.psi, perfect.psi, atol=1e-6)
    np.testing.assert_allclose(noisy.influence, perfect.influence, atol=1e-6)


def test_fixed_point_for_every_estimator():
    ds = small_design(accs=(0.9, 0.9), seed=4)
    preds = flip_labels(ds.gold, 0.8, 2, np.random.default_rng(0)).astype(float)
    ests = [sri_perfect(ds, 2, seed=1, fitter=FixedFitter()), sri_noisy(ds, 2, seed=1, fitter=FixedFitter()),
            naive_estimate(ds, preds), dsl_estimate(ds, preds), ppi_estimate(ds, preds)]
    for est in ests:
        np.testing.assert_allclose(est.influence.mean(axis=0), 0.0, atol=1e-10)
    class_infl = ests[1].meta["class_influence"]
    np.testing.assert_allclose(class_infl.mean(axis=0), 0.0, atol=1e-10)


def test_degenerate_plug_in_when_outcome_model_is_exact():
    base = generate_synthetic(SynthConfig(n=600, d=3, seed=2, coef_seed=0))
    y = np.column_stack([base.gold.astype(float), np.zeros(base.n)])
    ds = replace(base, y=y)
    holder = {}

    def fitter(batch, variant, num_classes, num_coders, seed):
        holder["pi"] = batch.t.mean()
        pi = batch.t.mean()
        return lambda yy, zz: (yy[:, 0], np.full(len(yy), pi))

    est = sri_perfect(ds, 2, seed=5, fitter=fitter)
    from sri.dataset import split_folds

    folds = split_folds(ds.n, 2, 5)
    expected = np.zeros(2)
    for f in range(2):
        held, train = folds.indices(f), folds.complement(f)
        pi1 = ds.t[train].mean()
        for level, pi in ((0, 1 - pi1), (1, pi1)):
            mbar = ds.gold[train][ds.t[train] == level].mean()
            treated = ds.t[held] == level
            expected[level] += np.sum(treated / pi * (ds.gold[held] - mbar) + mbar)
    np.testing.assert_allclose(est.psi, expected / ds.n, atol=1e-12)
    for level in (0, 1):
        assert est.psi[level] == pytest.approx(ds.gold[ds.t == level].mean(), abs=0.03)


def test_cross_fitting_never_scores_training_units():
    ds = small_design(n=400)
    ds = replace(ds, y=np.column_stack([ds.y, np.arange(ds.n, dtype=float)]))
    log = []

    def fitter(batch, variant, num_classes, num_coders, seed):
        trained = set(batch.y[:, -1].astype(int).tolist())
        calls = []
        log.append((trained, calls))

        def predict(y, z):
            calls.append(set(y[:, -1].astype(int).tolist()))
            return np.full(len(y), 0.5), np.full(len(y), 0.5)

        return predict

    sri_perfect(ds, 4, seed=0, fitter=fitter)
    scored = []
    for trained, calls in log:
        held = [c for c in calls if not c & trained]
        assert len(held) >= 1
        scored.extend(held[-1])
    assert sorted(scored) == list(range(ds.n))


def test_estimate_serialization():
    ds = small_design(seed=6)
    est = sri_perfect(ds, 2, seed=1, fitter=FixedFitter())
    doc = est.to_dict()
    assert set(doc) == {"estimator", "psi_0", "psi_1", "diff", "se_diff", "ci_low", "ci_high", "n", "k", "seed"}
    assert doc["ci_high"] - doc["diff"] == pytest.approx(1.96 * doc["se_diff"])
    assert doc["diff"] - doc["ci_low"] == pytest.approx(1.96 * doc["se_diff"])


def test_errors_surface():
    ds = small_design(seed=7)
    with pytest.raises(EstimationError, match="cannot fit outcome head"):
        sri_perfect(replace(ds, s=np.zeros(ds.n, dtype=np.int64), labels=np.full((ds.n, 2), -1)), 2,
                    fitter=FixedFitter())
    with pytest.raises(EstimationError):
        sri_perfect(ds, 1, fitter=FixedFitter())
    with pytest.raises(EstimationError):
        sri_noisy(replace(ds, labels=ds.labels[:, :1]), 2, fitter=FixedFitter())


# -- trained networks ------------------------------------------------------------------

def test_fold_count_stability():
    ds = sample_annotations(generate_synthetic(SynthConfig(n=3000, d=32, seed=8, coef_seed=0)), 0.2, 1)
    two = sri_perfect(ds, 2, FAST_NET, seed=4)
    five = sri_perfect(ds, 5, FAST_NET, seed=4)
    assert abs(two.diff - five.diff) < 3 * max(two.se_diff, five.se_diff)


def test_noisy_estimates_stay_in_range(small_noisy):
    est = sri_noisy(small_noisy, 3, FAST_NET, seed=2)
    assert np.all((est.psi >= -0.1) & (est.psi <= 1.1))
    assert len(est.meta["coder_models"]) == 3


def test_network_fitter_keeps_reports():
    ds = small_design(n=500, seed=9)
    fitter = NetworkFitter(FAST_NET)
    sri_perfect(ds, 2, seed=0, fitter=fitter)
    assert len(fitter.reports) == 2


# -- baselines ---------------------------------------------------------------------------

def test_naive_with_gold_predictions_is_sample_effect():
    ds = small_design(n=2000, seed=10)
    est = naive_estimate(ds, ds.gold.astype(float))
    assert est.diff == pytest.approx(ds.gold[ds.t == 1].mean() - ds.gold[ds.t == 0].mean(), abs=1e-15)


def test_naive_constant_predictions():
    ds = small_design(n=300, seed=11)
    assert naive_estimate(ds, np.full(ds.n, 0.4)).diff == pytest.approx(0.0, abs=1e-15)


def test_naive_attenuation():
    ds = generate_synthetic(SynthConfig(n=40000, d=16, seed=12, coef_seed=0))
    preds = flip_labels(ds.gold, 0.8, 2, np.random.default_rng(3)).astype(float)
    est = naive_estimate(ds, preds)
    sample = ds.gold[ds.t == 1].mean() - ds.gold[ds.t == 0].mean()
    assert abs(est.diff - 0.6 * sample) < 3 * est.se_diff


def test_naive_se_is_two_sample_formula():
    ds = small_design(n=500, seed=13)
    h = np.random.default_rng(0).random(ds.n)
    est = naive_estimate(ds, h)
    g0, g1 = h[ds.t == 0], h[ds.t == 1]
    assert est.se_diff == pytest.approx(np.sqrt(g0.var() / len(g0) + g1.var() / len(g1)), rel=1e-12)


def test_zero_correction_when_predictions_match_labels():
    ds = small_design(n=600, seed=14)
    h = np.random.default_rng(1).random(ds.n)
    h[ds.s == 1] = ds.labels[ds.s == 1, 0]
    est = dsl_estimate(ds, h)
    for level in (0, 1):
        assert est.psi[level] == h[ds.t == level].mean()


def test_fully_labeled_dsl_is_label_mean():
    ds = small_design(n=400, frac=1.0, seed=15)
    h = np.random.default_rng(2).random(ds.n)
    est = dsl_estimate(ds, h)
    for level in (0, 1):
        assert est.psi[level] == pytest.approx(ds.labels[ds.t == level, 0].mean(), abs=1e-12)


def test_dsl_equals_ppi_on_balanced_design():
    t = [0, 0, 0, 0, 1, 1, 1, 1]
    s = [1, 1, 0, 0, 1, 1, 0, 0]
    labels = [[1], [0], [-1], [-1], [1], [1], [-1], [-1]]
    h = np.array([1.0, 0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 1.0])
    ds = tiny_dataset(t, s, labels)
    np.testing.assert_array_equal(dsl_estimate(ds, h).psi, ppi_estimate(ds, h).psi)


def test_baselines_need_labels_in_each_group():
    ds = tiny_dataset([0, 0, 1, 1], [1, 0, 0, 0], [[1], [-1], [-1], [-1]])
    with pytest.raises(EstimationError, match="n_t = 0"):
        dsl_estimate(ds, np.zeros(4))
    with pytest.raises(EstimationError):
        naive_estimate(tiny_dataset([0, 0], [1, 1], [[1], [0]]), np.zeros(2))


def test_estimate_ci_is_symmetric():
    est = Estimate("x", np.array([0.2, 0.5]), np.array([[1.0, -1.0], [-1.0, 1.0]]))
    lo, hi = est.ci
    assert (lo + hi) / 2 == pytest.approx(0.3) and hi - lo == pytest.approx(2 * 1.96 * est.se_diff)

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sri.dataset import Dataset, SynthConfig, corrupt_labels, generate_synthetic, sample_annotations
from sri.diagnostics import (DegenerateSampleWarning, EquivTestConfig, accuracy_check, agreement_check,
                             centered_distances, diagnose, distance_correlation, equivalence_permutation_test,
                             pca_reduce, report_json)


def coded(gold, l1, l2, t=None, y=None):
    gold = np.asarray(gold)
    n = len(gold)
    t = np.zeros(n, dtype=np.int64) if t is None else np.asarray(t)
    y = np.random.default_rng(0).normal(size=(n, 3)) if y is None else y
    return Dataset(t=t, y=y, z=np.zeros((n, 0)), s=np.ones(n, dtype=np.int64),
                   labels=np.stack([l1, l2], axis=1).astype(np.int64), gold=gold)


def gold_sample(n=200, d=64, seed=0, accs=(0.85, 0.85)):
    ds = generate_synthetic(SynthConfig(n=n, d=d, seed=seed, coef_seed=2024))
    return corrupt_labels(ds, list(accs), seed + 1)


def copied_coder(ds):
    labels = ds.labels.copy()
    labels[:, 1] = labels[:, 0]
    return Dataset(t=ds.t, y=ds.y, z=ds.z, s=ds.s, labels=labels, gold=ds.gold)


# -- distance correlation -------------------------------------------------------------

def test_centered_distances_have_zero_margins(rng):
    a = centered_distances(rng.normal(size=(30, 4)))
    np.testing.assert_allclose(a.sum(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(a.sum(axis=1), 0.0, atol=1e-10)


def test_self_dependence_is_one(rng):
    x = rng.normal(size=(80, 3))
    assert distance_correlation(x, x) == pytest.approx(1.0, abs=1e-12)
    assert distance_correlation(x, 2.5 * x + 7) == pytest.approx(1.0, abs=1e-12)


def test_independent_samples_are_near_zero(rng):
    assert distance_correlation(rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2))) < 0.08


def test_nonlinear_dependence_is_detected(rng):
    x = rng.uniform(-1, 1, 500)
    # uncorrelated with x but fully dependent on it
    assert abs(np.corrcoef(x, x**2)[0, 1]) < 0.1
    assert distance_correlation(x, x**2) > 0.3


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_rotation_and_shift_invariance(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(25, 3)), rng.normal(size=(25, 2))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    base = distance_correlation(x, y)
    assert 0.0 <= base <= 1.0
    assert distance_correlation(x @ q + 4.0, y) == pytest.approx(base, abs=1e-10)
    assert distance_correlation(y, x) == pytest.approx(base, abs=1e-12)


def test_constant_sample_warns():
    with pytest.warns(DegenerateSampleWarning):
        assert distance_correlation(np.ones(10), np.arange(10.0)) == 0.0


def test_distance_correlation_needs_matching_samples():
    with pytest.raises(ValueError):
        distance_correlation(np.arange(3.0), np.arange(4.0))


def test_pca_keeps_leading_directions(rng):
    y = rng.normal(size=(400, 5)) * np.array([10.0, 5.0, 1.0, 0.1, 0.1])
    scores = pca_reduce(y, 2)
    assert scores.shape == (400, 2)
    assert scores[:, 0].var() > scores[:, 1].var() > 10
    assert pca_reduce(y, 50).shape == (400, 5)
    np.testing.assert_array_equal(pca_reduce(y, 2), scores)


# -- permutation test ------------------------------------------------------------------

def test_p_value_counts_reference_draws():
    ds = gold_sample(n=120)
    with pytest.warns(UserWarning, match="cannot reach"):
        res = equivalence_permutation_test(ds, EquivTestConfig(delta=1.0, b=9))
    # every reference draw is >= 0 = the observed statistic at a unit margin
    assert res.t_observed == 0.0
    assert res.p_value == pytest.approx(1 - np.count_nonzero(res.t_permuted > 0) / 10)
    assert res.p_value_at(1.0) == res.p_value
    big = equivalence_permutation_test(ds, EquivTestConfig(delta=1.0, b=99))
    assert big.p_value == pytest.approx((1 + np.count_nonzero(big.t_permuted <= 0)) / 100)


def test_p_value_is_monotone_in_margin():
    res = equivalence_permutation_test(gold_sample(n=150, seed=3), EquivTestConfig(delta=0.0, b=199))
    deltas = np.linspace(0, 1, 21)
    ps = [res.p_value_at(d) for d in deltas]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    assert ps[0] == res.p_value


def test_equivalence_interval_is_rejection_boundary():
    res = equivalence_permutation_test(gold_sample(n=200, seed=4), EquivTestConfig(b=199))
    assert res.p_value is None
    eps = res.equivalence_interval
    assert eps is not None
    assert res.p_value_at(eps) <= 0.05
    if eps > 1e-6:
        assert res.p_value_at(eps - 1e-6) > 0.05


def test_copied_coder_is_not_declared_independent():
    res = equivalence_permutation_test(copied_coder(gold_sample(n=200, seed=5)), EquivTestConfig(delta=0.25, b=199))
    assert max(r["dcor_coders"] for r in res.per_stratum) == pytest.approx(1.0)
    assert res.p_value > 0.05


def test_independent_coders_are_declared_equivalent():
    res = equivalence_permutation_test(gold_sample(n=200, seed=6), EquivTestConfig(delta=0.5, b=199))
    assert res.p_value <= 0.05


def test_result_is_reproducible():
    ds = gold_sample(n=100, seed=7)
    a = equivalence_permutation_test(ds, EquivTestConfig(delta=0.2, b=49, seed=3))
    b = equivalence_permutation_test(ds, EquivTestConfig(delta=0.2, b=49, seed=3))
    np.testing.assert_array_equal(a.t_permuted, b.t_permuted)


def test_tiny_stratum_is_an_error():
    gold = np.array([0] * 10 + [1])
    ds = coded(gold, gold, gold)
    with pytest.raises(ValueError, match="stratum L=1 has 1 unit"):
        equivalence_permutation_test(ds, EquivTestConfig(delta=0.1, b=19))


def test_constant_coder_stratum_is_flagged():
    gold = np.array([0] * 10 + [1] * 10)
    l1 = gold.copy()
    l2 = np.where(np.arange(20) % 3 == 0, 1 - gold, gold)
    with pytest.warns(DegenerateSampleWarning):
        res = equivalence_permutation_test(coded(gold, l1, l2), EquivTestConfig(delta=0.1, b=19))
    assert res.degenerate_strata == [0, 1]


def test_missing_gold_is_an_error():
    ds = gold_sample(n=50)
    with pytest.raises(ValueError, match="gold"):
        equivalence_permutation_test(Dataset(t=ds.t, y=ds.y, z=ds.z, s=ds.s, labels=ds.labels),
                                     EquivTestConfig(b=19))


@pytest.mark.parametrize("kwargs", [{"b": 0}, {"delta": -0.1}, {"pca_dims": 0},
                                    {"dependence_measure": "hsic"}])
def test_bad_config(kwargs):
    with pytest.raises(ValueError):
        EquivTestConfig(**kwargs)


# -- agreement and accuracy -----------------------------------------------------------

def test_agreement_borderline_is_not_a_pass():
    # 10 units, both coders say 1 on exactly 5 of them
    l1 = np.array([1] * 5 + [0] * 5)
    l2 = np.array([1] * 5 + [1, 1, 0, 0, 0])
    rows = agreement_check(coded(l1, l1, l2), pool_t=True)
    row = next(r for r in rows if r["label"] == 1)
    assert row["rate"] == 0.5 and row["borderline"] and not row["passed"]
    assert row["dominance_rate"] == pytest.approx(5 / 7)


def test_agreement_tabulation_by_treatment():
    t = np.array([0, 0, 0, 1, 1, 1, 1, 1])
    l1 = np.array([1, 1, 0, 1, 1, 1, 1, 0])
    l2 = np.array([1, 0, 0, 1, 1, 1, 1, 1])
    rows = agreement_check(coded(l1, l1, l2, t=t))
    got = {(r["label"], r["t"]): r for r in rows}
    assert got[(1, 1)]["rate"] == pytest.approx(4 / 8)
    assert got[(1, 0)]["rate"] == pytest.approx(1 / 8)
    assert got[(0, 0)]["rate"] == pytest.approx(1 / 8)
    assert got[(0, 1)]["rate"] == 0.0 and got[(0, 1)]["dominance_rate"] is None
    assert got[(1, 1)]["n_cell"] == 5


def test_agreement_empty_cell_not_evaluable():
    l = np.array([0, 1, 1, 0])
    rows = agreement_check(coded(l, l, l, t=np.zeros(4, dtype=np.int64)))
    empty = [r for r in rows if r["t"] == 1]
    assert empty and all(not r["evaluable"] and r["passed"] is None for r in empty)


def test_agreement_by_stratum():
    l = np.array([1, 1, 1, 0, 0, 0])
    rows = agreement_check(coded(l, l, l), strata=np.array([0, 0, 0, 1, 1, 1]), pool_t=True)
    assert {(r["stratum"], r["label"]): r["rate"] for r in rows} == {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 0}


def test_accuracy_confusion():
    gold = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    l1 = np.array([0, 0, 0, 1, 1, 1, 0, 0])
    acc = accuracy_check(coded(gold, l1, gold), 0)
    np.testing.assert_allclose(acc["confusion"], [[0.75, 0.25], [0.5, 0.5]])
    assert acc["passed"] == [True, False]


def test_accuracy_unseen_class():
    gold = np.zeros(4, dtype=np.int64)
    acc = accuracy_check(coded(gold, gold, gold), 1)
    assert acc["passed"] == [True, None] and acc["evaluable"] == [True, False]


def test_diagnose_report_is_json():
    ds = sample_annotations(gold_sample(n=400, seed=8), 0.5, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        report = diagnose(ds, delta=0.3, b=49, seed=1)
    doc = json.loads(report_json(report))
    assert doc["num_gold"] == 200
    assert {"equivalence_test", "agreement", "agreement_pooled", "accuracy", "warnings"} <= set(doc)
    assert len(doc["accuracy"]) == 2

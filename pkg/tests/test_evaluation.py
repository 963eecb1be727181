from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partialmix.evaluation import adjusted_rand_index, align_labels, contingency_table, pair_counts, rand_index


def brute_pairs(a, b):
    """O(n^2) enumeration of the four pair categories."""
    both = only_a = only_b = neither = 0
    for i, j in combinations(range(len(a)), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        both += sa and sb
        only_a += sa and not sb
        only_b += sb and not sa
        neither += not sa and not sb
    return both, only_a, only_b, neither


def brute_ari(a, b):
    both, only_a, only_b, neither = brute_pairs(a, b)
    total = both + only_a + only_b + neither
    sa, sb = both + only_a, both + only_b
    expected = sa * sb / total
    top = (sa + sb) / 2
    if top == expected:
        return 1.0 if sa == sb == both else 0.0
    return (both - expected) / (top - expected)


labels = st.lists(st.integers(0, 4), min_size=2, max_size=40)


def test_identical():
    a = [0, 0, 1, 1, 2]
    assert rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, a) == 1.0


def test_rand_example():
    assert rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(2 / 6)


def test_ari_contingency_example():
    a, b = [0, 0, 0, 1, 1, 1], [0, 0, 1, 1, 2, 2]
    # table [[2,1,0],[0,1,2]]: index 2, row pairs 6, col pairs 3, total 15
    expected = (2 - 6 * 3 / 15) / (0.5 * (6 + 3) - 6 * 3 / 15)
    assert adjusted_rand_index(a, b) == pytest.approx(expected)
    assert adjusted_rand_index(a, b) == pytest.approx(brute_ari(a, b))
    np.testing.assert_array_equal(contingency_table(a, b).counts, [[2, 1, 0], [0, 1, 2]])


@given(labels, st.permutations(range(5)))
def test_relabel_invariance(a, perm):
    b = [perm[x] for x in a]
    assert rand_index(a, b) == 1.0
    assert adjusted_rand_index(a, b) == 1.0


@given(st.integers(0, 2**32 - 1), st.integers(2, 60))
@settings(max_examples=80)
def test_against_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 4, n), rng.integers(0, 3, n)
    assert pair_counts(a, b) == brute_pairs(a, b)
    assert adjusted_rand_index(a, b) == brute_ari(a, b)
    assert rand_index(a, b) == pytest.approx(sum(brute_pairs(a, b)[::3]) / (n * (n - 1) / 2))


@given(st.integers(0, 2**32 - 1), st.integers(2, 50))
@settings(max_examples=60)
def test_symmetric_and_bounds(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 3, n), rng.integers(0, 3, n)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a))
    assert rand_index(a, b) == rand_index(b, a)
    ari = adjusted_rand_index(a, b)
    assert ari <= 1.0 + 1e-12
    assert 0.0 <= rand_index(a, b) <= 1.0
    if ari >= 0:
        assert rand_index(a, b) >= ari - 1e-12


def test_degenerate_trivial_partitions():
    assert adjusted_rand_index([0, 0, 0], [1, 1, 1]) == 1.0
    assert adjusted_rand_index([0, 1, 2], [2, 0, 1]) == 1.0


def test_errors():
    with pytest.raises(ValueError):
        rand_index([0, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        adjusted_rand_index([0], [0])


def test_random_partitions_average_zero():
    rng = np.random.default_rng(11)
    vals = [adjusted_rand_index(rng.integers(0, 3, 50), rng.integers(0, 3, 50)) for _ in range(1000)]
    assert -0.02 < np.mean(vals) < 0.02


def test_align_labels():
    ref = np.array([0, 0, 1, 1, 2, 2])
    lab = np.array([2, 2, 0, 0, 1, 1])
    np.testing.assert_array_equal(align_labels(ref, lab), ref)

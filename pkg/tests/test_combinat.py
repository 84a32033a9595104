from itertools import combinations
from math import factorial

import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from kikuchi.combinat import (
    all_subsets,
    binomial,
    catalan,
    gaussian_moment,
    multinomial,
    rademacher_moment,
    rank_rows,
    rank_subset,
    unrank_subset,
)
from kikuchi.errors import InvalidArgumentError


def pascal(n, k):
    row = [1]
    for _ in range(n):
        row = [a + b for a, b in zip([0] + row, row + [0])]
    return row[k] if k <= n else 0


def colex_enumeration(n, k):
    return sorted(combinations(range(n), k), key=lambda s: s[::-1])


@pytest.mark.parametrize("n,k,expected", [(6, 2, 15), (5, 0, 1), (28, 2, pascal(28, 2)), (3, 5, 0)])
def test_binomial(n, k, expected):
    assert pascal(28, 2) == 378
    assert binomial(n, k) == expected


def test_binomial_is_exact_for_large_arguments():
    assert binomial(200, 100) == factorial(200) // factorial(100) ** 2


@pytest.mark.parametrize("n,parts,expected", [(4, [2, 2], 6), (4, [4], 1), (6, [2, 2, 2], factorial(6) // 8)])
def test_multinomial(n, parts, expected):
    assert multinomial(n, parts) == expected


def test_multinomial_example_value():
    assert multinomial(6, [2, 2, 2]) == 90


def test_multinomial_sum_mismatch():
    with pytest.raises(InvalidArgumentError):
        multinomial(5, [2, 2])


@pytest.mark.parametrize("subset,expected", [((0, 1), 0), ((3, 4), 9), ((0, 2), 1)])
def test_rank_examples(subset, expected):
    assert colex_enumeration(5, 2).index(subset) == expected
    assert rank_subset(subset) == expected


@pytest.mark.parametrize("idx,expected", [(0, (0, 1)), (9, (3, 4)), (1, (0, 2))])
def test_unrank_examples(idx, expected):
    assert unrank_subset(idx, 2, 5) == expected


def test_unrank_out_of_range():
    with pytest.raises(InvalidArgumentError):
        unrank_subset(10, 2, 5)
    with pytest.raises(InvalidArgumentError):
        unrank_subset(-1, 2, 5)


def test_round_trip_exhaustive():
    for n in range(13):
        for k in range(n + 1):
            for idx, s in enumerate(colex_enumeration(n, k)):
                assert rank_subset(s) == idx
                assert unrank_subset(idx, k, n) == s


def test_vectorized_ranking_matches_scalar():
    rows = all_subsets(9, 4)
    assert [tuple(r) for r in rows] == colex_enumeration(9, 4)
    assert list(rank_rows(rows, 9)) == list(range(len(rows)))


def test_pascal_identity():
    for n in range(1, 65):
        for k in range(1, n + 1):
            assert binomial(n, k) == binomial(n - 1, k - 1) + binomial(n - 1, k)


@given(st.integers(0, 40), st.data())
def test_multinomial_two_parts_is_binomial(n, data):
    k = data.draw(st.integers(0, n))
    assert multinomial(n, [k, n - k]) == binomial(n, k)


@pytest.mark.parametrize("t,expected", [(2, 1), (3, 0), (6, 15), (0, 1)])
def test_gaussian_moment(t, expected):
    assert gaussian_moment(t) == expected


@pytest.mark.parametrize("t", range(0, 11))
def test_gaussian_moment_matches_quadrature(t):
    value, _ = integrate.quad(lambda x: x**t * stats.norm.pdf(x), -40, 40, limit=200)
    assert gaussian_moment(t) == pytest.approx(value, abs=1e-8, rel=1e-8)


def test_gaussian_moment_bound():
    # squared form of (t-1)!! <= (2t)^(t/2), exact in integers
    for t in range(2, 21, 2):
        assert gaussian_moment(t) ** 2 <= (2 * t) ** t


@pytest.mark.parametrize("t,expected", [(2, 1), (5, 0), (0, 1)])
def test_rademacher_moment(t, expected):
    assert rademacher_moment(t) == expected


def test_catalan():
    assert [catalan(q) for q in range(6)] == [1, 1, 2, 5, 14, 42]

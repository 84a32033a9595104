"""Exact combinatorics on subsets of ``range(n)``.

Subsets are plain sorted tuples of ints. Ranking is colexicographic
(the combinadic): ``rank(S) = sum(C(s_i, i + 1))`` for ``s_0 < s_1 < ...``.
"""
from __future__ import annotations

import bisect
from functools import lru_cache
from math import comb, factorial, prod
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError

Subset = tuple[int, ...]


def binomial(n: int, k: int) -> int:
    """C(n, k) as an exact int; 0 when ``k > n``."""
    if n < 0 or k < 0:
        raise InvalidArgumentError(f"binomial needs nonnegative arguments, got ({n}, {k})")
    return comb(n, k)


def multinomial(n: int, parts: Sequence[int]) -> int:
    """``n! / prod(p!)`` for a composition ``parts`` of ``n``."""
    if any(p < 0 for p in parts):
        raise InvalidArgumentError(f"negative part in {list(parts)}")
    if sum(parts) != n:
        raise InvalidArgumentError(f"parts {list(parts)} do not sum to {n}")
    return factorial(n) // prod(factorial(p) for p in parts)


def make_subset(elements: Iterable[int], n: int) -> Subset:
    """Normalize ``elements`` to a sorted tuple and check it lies in ``range(n)``."""
    s = tuple(sorted(int(e) for e in elements))
    if len(set(s)) != len(s):
        raise InvalidArgumentError(f"repeated element in {s}")
    if s and (s[0] < 0 or s[-1] >= n):
        raise InvalidArgumentError(f"subset {s} not contained in range({n})")
    return s


def rank_subset(subset: Sequence[int]) -> int:
    """Colex rank of a strictly increasing sequence."""
    r = 0
    prev = -1
    for i, e in enumerate(subset):
        if e <= prev:
            raise InvalidArgumentError(f"subset {tuple(subset)} is not strictly increasing")
        r += comb(e, i + 1)
        prev = e
    return r


def unrank_subset(idx: int, k: int, n: int) -> Subset:
    """Inverse of :func:`rank_subset` over the k-subsets of ``range(n)``."""
    total = comb(n, k)
    if not 0 <= idx < total:
        raise InvalidArgumentError(f"index {idx} outside [0, C({n},{k}) = {total})")
    out = [0] * k
    hi = n
    for i in range(k, 0, -1):
        # largest c < hi with C(c, i) <= idx; C(., i) is monotone so bisect works
        c = bisect.bisect_right(range(hi), idx, key=lambda x: comb(x, i)) - 1
        out[i - 1] = c
        idx -= comb(c, i)
        hi = c
    return tuple(out)


def gaussian_moment(t: int) -> int:
    """E[g**t] for a standard normal g: (t-1)!! for even t, 0 for odd t."""
    if t < 0:
        raise InvalidArgumentError("moment order must be nonnegative")
    if t % 2:
        return 0
    return prod(range(t - 1, 0, -2))


def rademacher_moment(t: int) -> int:
    if t < 0:
        raise InvalidArgumentError("moment order must be nonnegative")
    return 0 if t % 2 else 1


def catalan(q: int) -> int:
    return comb(2 * q, q) // (q + 1)


@lru_cache(maxsize=64)
def binomial_table(n: int, k: int) -> np.ndarray:
    """int64 table ``T[a, b] = C(a, b)`` for ``a <= n``, ``b <= k``.

    Raises if any ``C(n, b)`` would overflow int64; callers index vectors
    of that length so the guard doubles as a sanity check on problem size.
    """
    if comb(n, min(k, n // 2)) >= 2**62:
        raise InvalidArgumentError(f"C({n}, <= {k}) does not fit in int64")
    table = np.zeros((n + 1, k + 1), dtype=np.int64)
    for a in range(n + 1):
        for b in range(min(a, k) + 1):
            table[a, b] = comb(a, b)
    table.setflags(write=False)
    return table


def all_subsets(n: int, k: int) -> np.ndarray:
    """All k-subsets of ``range(n)`` as rows of an int64 array, in colex order."""
    total = comb(n, k)
    out = np.empty((total, k), dtype=np.int64)
    if k == 0:
        return out
    # colex order: lexicographic order on the reversed tuples
    from itertools import combinations

    rows = sorted(combinations(range(n), k), key=lambda s: s[::-1])
    out[:] = rows
    return out


def rank_rows(rows: np.ndarray, n: int) -> np.ndarray:
    """Vectorized colex rank of each (sorted) row of ``rows``."""
    rows = np.asarray(rows, dtype=np.int64)
    k = rows.shape[-1]
    table = binomial_table(n, max(k, 1))
    ranks = np.zeros(rows.shape[:-1], dtype=np.int64)
    for i in range(k):
        ranks += table[rows[..., i], i + 1]
    return ranks

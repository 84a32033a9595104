"""The level-ell Kikuchi matrix of a symmetric tensor, as an implicit operator.

Rows and columns are indexed by ell-subsets of ``range(n)`` in colex order.

Even r: ``M[I, J] = G[I ^ J]`` when ``|I ^ J| = r``, else 0.

Odd r: nonzero only when ``|I - J| = |J - I| = r - 1``. Then
``M[I, J] = sum_t sum_{O1,O2} sum_{N1,N2} G[O1 | N1 | {t}] * G[O2 | N2 | {t}]``
with ``t`` outside ``I | J`` and ``(O1, O2)``, ``(N1, N2)`` ordered splits of
``I - J`` and ``J - I`` into halves of size ``(r - 1) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .combinat import Subset, all_subsets, binomial_table, make_subset, rank_rows, rank_subset, unrank_subset
from .errors import InvalidArgumentError, ResourceLimitError
from .tensor import SymmetricTensor

DENSE_CAP = 5000
# above this many bytes of index tables the blocked backend is not built
BLOCKED_MEMORY_CAP = 2 * 1024**3


class Neighbor(NamedTuple):
    """A column ``subset`` in the support of a row.

    ``terms`` lists the monomials of the entry: each term is a tuple of
    r-subsets whose tensor entries are multiplied; the entry is the sum.
    Even r has a single one-edge term, odd r has two-edge terms.
    """

    subset: Subset
    terms: tuple[tuple[Subset, ...], ...]


def row_degree(n: int, ell: int, r: int) -> int:
    """Number of columns in the support of every row."""
    if r % 2 == 0:
        return comb(n - ell, r // 2) * comb(ell, r // 2)
    return comb(ell, r - 1) * comb(n - ell, r - 1)


def _ordered_halves(part: Sequence[int]) -> list[tuple[Subset, Subset]]:
    h = len(part) // 2
    out = []
    for first in combinations(part, h):
        second = tuple(e for e in part if e not in first)
        out.append((first, second))
    return out


@dataclass(eq=False)
class KikuchiOperator:
    """Implicit symmetric operator of dimension C(n, ell).

    ``backend`` selects the matvec implementation: ``"stream"`` regenerates
    each row's neighbors on the fly (numba, row-parallel); ``"blocked"``
    (even r only) groups entries by the common part ``K = I & J`` so that a
    matvec is one dense product with the (r/2, r/2) flattening of the tensor.
    ``"auto"`` picks ``blocked`` for even r when its tables fit in memory.
    """

    tensor: SymmetricTensor
    ell: int
    backend: str = "auto"
    _blocked: tuple | None = field(default=None, init=False, repr=False)
    _stream: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        r, n, ell = self.tensor.r, self.tensor.n, self.ell
        if ell < (r + 1) // 2:
            raise InvalidArgumentError(f"level ell={ell} below ceil(r/2)={(r + 1) // 2}")
        if r % 2 and ell < r - 1:
            raise InvalidArgumentError(f"odd r={r} needs ell >= r-1, got ell={ell}")
        if 2 * ell > n:
            raise InvalidArgumentError(f"level ell={ell} above n/2 for n={n}")
        if self.backend not in ("auto", "stream", "blocked"):
            raise InvalidArgumentError(f"unknown backend {self.backend!r}")
        if self.backend == "blocked" and r % 2:
            raise InvalidArgumentError("blocked backend supports even r only")
        if self.backend == "auto":
            self.backend = "blocked" if r % 2 == 0 and self._blocked_bytes() <= BLOCKED_MEMORY_CAP else "stream"

    @property
    def n(self) -> int:
        return self.tensor.n

    @property
    def r(self) -> int:
        return self.tensor.r

    @property
    def parity(self) -> str:
        return "even" if self.r % 2 == 0 else "odd"

    @property
    def dim(self) -> int:
        return comb(self.n, self.ell)

    @property
    def degree(self) -> int:
        return row_degree(self.n, self.ell, self.r)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    # --- reference entries -------------------------------------------------

    def _pair(self, I, J) -> tuple[Subset, Subset]:
        I = make_subset(I, self.n)
        J = make_subset(J, self.n)
        if len(I) != self.ell or len(J) != self.ell:
            raise InvalidArgumentError(f"expected {self.ell}-subsets, got sizes {len(I)} and {len(J)}")
        return I, J

    def entry_even(self, I: Sequence[int], J: Sequence[int]) -> float:
        if self.r % 2:
            raise InvalidArgumentError("entry_even on an odd-order tensor")
        I, J = self._pair(I, J)
        diff = set(I) ^ set(J)
        if len(diff) != self.r:
            return 0.0
        return self.tensor.entry(diff)

    def entry_odd(self, I: Sequence[int], J: Sequence[int]) -> float:
        if self.r % 2 == 0:
            raise InvalidArgumentError("entry_odd on an even-order tensor")
        I, J = self._pair(I, J)
        removed = tuple(e for e in I if e not in J)
        added = tuple(e for e in J if e not in I)
        if len(removed) != self.r - 1:
            return 0.0
        return self._odd_value(self._odd_terms(I, J, removed, added))

    def entry(self, I: Sequence[int], J: Sequence[int]) -> float:
        return self.entry_odd(I, J) if self.r % 2 else self.entry_even(I, J)

    def _odd_terms(self, I, J, removed, added):
        used = set(I) | set(J)
        terms = []
        for t in range(self.n):
            if t in used:
                continue
            for o1, o2 in _ordered_halves(removed):
                for n1, n2 in _ordered_halves(added):
                    terms.append((tuple(sorted(o1 + n1 + (t,))), tuple(sorted(o2 + n2 + (t,)))))
        return tuple(terms)

    def _odd_value(self, terms) -> float:
        g = self.tensor.entries
        return float(sum(g[rank_subset(a)] * g[rank_subset(b)] for a, b in terms))

    def neighbors(self, I: Sequence[int]) -> Iterator[Neighbor]:
        """Columns in the support of row ``I``, each with the monomials of its entry."""
        I = make_subset(I, self.n)
        if len(I) != self.ell:
            raise InvalidArgumentError(f"expected an {self.ell}-subset, got {I}")
        outside = tuple(e for e in range(self.n) if e not in I)
        if self.r % 2 == 0:
            h = self.r // 2
            for removed in combinations(I, h):
                kept = [e for e in I if e not in removed]
                for added in combinations(outside, h):
                    J = tuple(sorted(kept + list(added)))
                    yield Neighbor(J, ((tuple(sorted(removed + added)),),))
        else:
            m = self.r - 1
            for removed in combinations(I, m):
                kept = [e for e in I if e not in removed]
                for added in combinations(outside, m):
                    J = tuple(sorted(kept + list(added)))
                    yield Neighbor(J, self._odd_terms(I, J, removed, added))

    def term_value(self, terms) -> float:
        g = self.tensor.entries
        total = 0.0
        for term in terms:
            p = 1.0
            for e in term:
                p *= g[rank_subset(e)]
            total += p
        return total

    def assemble_dense(self, cap: int = DENSE_CAP, method: str = "reference") -> np.ndarray:
        """Explicit matrix. ``reference`` walks :meth:`neighbors` row by row;
        ``fast`` uses vectorized index tables (even r) or the stream kernel."""
        dim = self.dim
        if dim > cap:
            raise ResourceLimitError(f"dense assembly of dimension {dim} exceeds cap {cap}")
        if method == "fast":
            if self.r % 2 == 0:
                return self._dense_blocked()
            return self.matmat(np.eye(dim))
        if method != "reference":
            raise InvalidArgumentError(f"unknown assembly method {method!r}")
        dense = np.zeros((dim, dim))
        for i in range(dim):
            I = unrank_subset(i, self.ell, self.n)
            for nb in self.neighbors(I):
                dense[i, rank_subset(nb.subset)] = self.term_value(nb.terms)
        return dense

    # --- fast paths ---------------------------------------------------------

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise InvalidArgumentError(f"vector of shape {x.shape} for operator of dimension {self.dim}")
        if self.backend == "blocked":
            return self._matvec_blocked(x)
        return self._matvec_stream(x)

    def matmat(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.column_stack([self.matvec(col) for col in x.T])

    def __matmul__(self, x):
        x = np.asarray(x)
        return self.matvec(x) if x.ndim == 1 else self.matmat(x)

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator

        return LinearOperator(self.shape, matvec=self.matvec, dtype=np.float64)

    def _stream_tables(self):
        if self._stream is None:
            n, ell, r = self.n, self.ell, self.r
            table = binomial_table(n, max(ell, r) + 1)
            m = r // 2 if r % 2 == 0 else r - 1
            in_combos = np.array(list(combinations(range(ell), m)), dtype=np.int64).reshape(-1, m)
            out_combos = np.array(list(combinations(range(n - ell), m)), dtype=np.int64).reshape(-1, m)
            splits = np.array(list(combinations(range(m), m // 2)), dtype=np.int64).reshape(-1, m // 2)
            self._stream = (table, in_combos, out_combos, splits)
        return self._stream

    def _matvec_stream(self, x: np.ndarray) -> np.ndarray:
        from . import _kernels

        table, in_combos, out_combos, splits = self._stream_tables()
        y = np.empty_like(x)
        g = self.tensor.entries
        if self.r % 2 == 0:
            _kernels.matvec_even(x, g, self.n, self.ell, self.r // 2, table, in_combos, out_combos, y)
        else:
            _kernels.matvec_odd(x, g, self.n, self.ell, self.r, table, in_combos, out_combos, splits, y)
        return y

    def _blocked_bytes(self) -> int:
        h = self.r // 2
        n_pairs = comb(self.n, h)
        return 8 * (n_pairs * n_pairs + 2 * comb(self.n, self.ell - h) * n_pairs)

    def _blocked_tables(self):
        """``flat[p, q] = G[P_p | P_q]`` for disjoint r/2-sets (0 otherwise) and
        ``index[k, p] = rank(K_k | P_p)`` (or ``dim`` when they intersect)."""
        if self._blocked is None:
            n, ell, h = self.n, self.ell, self.r // 2
            halves = all_subsets(n, h)
            n_half = halves.shape[0]
            flat = np.zeros((n_half, n_half))
            g = self.tensor.entries
            for start in range(0, n_half, 512):
                block = halves[start:start + 512]
                union = np.concatenate(
                    [np.broadcast_to(block[:, None, :], (block.shape[0], n_half, h)),
                     np.broadcast_to(halves[None, :, :], (block.shape[0], n_half, h))],
                    axis=2,
                )
                union = np.sort(union, axis=2)
                disjoint = np.all(np.diff(union, axis=2) > 0, axis=2)
                ranks = rank_rows(union, n)
                flat[start:start + block.shape[0]] = np.where(disjoint, g[np.where(disjoint, ranks, 0)], 0.0)
            commons = all_subsets(n, ell - h)
            union = np.concatenate(
                [np.broadcast_to(commons[:, None, :], (commons.shape[0], n_half, ell - h)),
                 np.broadcast_to(halves[None, :, :], (commons.shape[0], n_half, h))],
                axis=2,
            )
            union = np.sort(union, axis=2)
            disjoint = np.all(np.diff(union, axis=2) > 0, axis=2)
            index = np.where(disjoint, rank_rows(union, n), self.dim)
            self._blocked = (flat, index)
        return self._blocked

    def _matvec_blocked(self, x: np.ndarray) -> np.ndarray:
        flat, index = self._blocked_tables()
        padded = np.append(x, 0.0)
        gathered = padded[index]
        # flat is symmetric, so rows of gathered @ flat are the block products
        prod = gathered @ flat
        return np.bincount(index.ravel(), weights=prod.ravel(), minlength=self.dim + 1)[: self.dim]

    def _dense_blocked(self) -> np.ndarray:
        flat, index = self._blocked_tables()
        dim = self.dim
        dense = np.zeros((dim + 1, dim + 1))
        for k in range(index.shape[0]):
            idx = index[k]
            dense[np.ix_(idx, idx)] += flat
        return dense[:dim, :dim]

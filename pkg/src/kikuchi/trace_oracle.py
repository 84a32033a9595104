"""Exact expected traces E[Tr(M^{2q})] of Kikuchi matrices.

Three independent routes:

* :func:`expected_trace` enumerates closed walks depth-first and sums their
  walk values (even r);
* :func:`expected_trace_bruteforce` averages exact integer traces over every
  sign assignment of a Rademacher tensor;
* :func:`monte_carlo_trace` averages sampled traces.

Also the chunked lower-bound walk family: a start set is split into buckets
of r/2 vertices; each bucket steps out to fresh vertices once and back once
per chunk.
"""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, product
from math import comb, prod
from typing import Iterator

import numpy as np

from .combinat import Subset, gaussian_moment, multinomial, rademacher_moment, rank_subset, unrank_subset
from .errors import InvalidArgumentError, ResourceLimitError
from .operator import DENSE_CAP
from .tensor import noise_block

DEFAULT_BUDGET = 50_000_000
MOMENTS = {"gaussian": gaussian_moment, "rademacher": rademacher_moment}


def _moment_fn(distribution: str):
    try:
        return MOMENTS[distribution]
    except KeyError:
        raise InvalidArgumentError(f"unknown distribution {distribution!r}") from None


@dataclass(frozen=True)
class TraceWalk:
    """Closed walk ``S_1 .. S_{2q+1}`` over ell-subsets.

    ``step_edges[i]`` holds the r-subsets read by step i: one for even r,
    two sharing ``intermediates[i]`` for odd r.
    """

    boundary_sets: tuple[Subset, ...]
    step_edges: tuple[tuple[Subset, ...], ...]
    intermediates: tuple[int, ...] | None = None

    @property
    def length(self) -> int:
        return len(self.step_edges)

    @property
    def multiplicities(self) -> Counter:
        return Counter(e for edges in self.step_edges for e in edges)

    @property
    def closed(self) -> bool:
        return self.boundary_sets[0] == self.boundary_sets[-1]

    @property
    def contributing(self) -> bool:
        return all(m % 2 == 0 for m in self.multiplicities.values())

    def validate(self, r: int) -> None:
        """Raise unless every step has the right shape for order r."""
        sets = self.boundary_sets
        if len(sets) != self.length + 1:
            raise InvalidArgumentError("need one more boundary set than steps")
        if not self.closed:
            raise InvalidArgumentError("walk is not closed")
        ell = len(sets[0])
        for i, (a, b) in enumerate(zip(sets, sets[1:])):
            if len(a) != ell or len(set(a)) != ell:
                raise InvalidArgumentError(f"boundary set {i} is not an {ell}-set")
            diff = tuple(sorted(set(a) ^ set(b)))
            edges = self.step_edges[i]
            if r % 2 == 0:
                if len(diff) != r or edges != (diff,):
                    raise InvalidArgumentError(f"step {i} does not move along its edge")
            else:
                t = self.intermediates[i]
                if len(diff) != 2 * (r - 1) or t in a or t in b or len(edges) != 2:
                    raise InvalidArgumentError(f"odd step {i} malformed")
                if set(edges[0]) | set(edges[1]) != set(diff) | {t}:
                    raise InvalidArgumentError(f"odd step {i} edges do not cover the move")


def walk_value(walk: TraceWalk, distribution: str = "gaussian") -> int:
    """Product over distinct edges of the entry moment at the edge's multiplicity."""
    moment = _moment_fn(distribution)
    return prod(moment(m) for m in walk.multiplicities.values())


# --- exact enumeration ---------------------------------------------------------


class _KikuchiGraph:
    """Neighbor lists of the even-r Kikuchi graph, built on demand.

    Vertices and edges are colex ranks of ell- and r-subsets.
    """

    def __init__(self, n: int, ell: int, r: int):
        self.n, self.ell, self.h = n, ell, r // 2
        self._adj: dict[int, list[tuple[int, int]]] = {}

    def __call__(self, v: int) -> list[tuple[int, int]]:
        adj = self._adj.get(v)
        if adj is None:
            I = unrank_subset(v, self.ell, self.n)
            outside = [e for e in range(self.n) if e not in I]
            adj = []
            for removed in combinations(I, self.h):
                kept = [e for e in I if e not in removed]
                for added in combinations(outside, self.h):
                    J = tuple(sorted(kept + list(added)))
                    adj.append((rank_subset(J), rank_subset(tuple(sorted(removed + added)))))
            self._adj[v] = adj
        return adj


def _dfs_sum(n, ell, r, q, distribution, starts, first_steps, budget):
    """Sum of walk values over closed 2q-walks from ``starts``.

    ``first_steps`` optionally restricts the first move (used to split work).
    """
    moment = _moment_fn(distribution)
    graph = _KikuchiGraph(n, ell, r)
    counts: Counter = Counter()
    steps = 2 * q
    state = {"nodes": 0, "odd": 0}
    total = 0

    def push(e):
        counts[e] += 1
        state["odd"] += 1 if counts[e] % 2 else -1

    def pop(e):
        counts[e] -= 1
        state["odd"] += 1 if counts[e] % 2 else -1
        if counts[e] == 0:
            del counts[e]

    def descend(v, start, depth):
        nonlocal total
        state["nodes"] += 1
        if state["nodes"] > budget:
            raise ResourceLimitError(f"walk enumeration exceeded node budget {budget}")
        remaining = steps - depth
        # each step flips the parity of exactly one edge
        if state["odd"] > remaining:
            return
        if remaining == 0:
            if v == start and state["odd"] == 0:
                total += prod(moment(m) for m in counts.values())
            return
        choices = graph(v) if depth or first_steps is None else [graph(v)[i] for i in first_steps]
        for w, e in choices:
            push(e)
            descend(w, start, depth + 1)
            pop(e)

    for s in starts:
        descend(s, s, 0)
    return total


def _dfs_task(args):
    return _dfs_sum(*args)


def expected_trace(
    n: int,
    ell: int,
    r: int,
    q: int,
    distribution: str = "rademacher",
    budget: int = DEFAULT_BUDGET,
    use_symmetry: bool = True,
    workers: int = 1,
) -> int:
    """E[Tr(M_ell^{2q})] as an exact integer.

    With ``use_symmetry`` the walks from one start set are enumerated and
    multiplied by C(n, ell): relabeling ``range(n)`` maps walks from any
    start bijectively onto walks from any other, preserving values.
    Odd r falls back to :func:`expected_trace_bruteforce` (Rademacher only).
    """
    _moment_fn(distribution)
    if q < 0:
        raise InvalidArgumentError("q must be nonnegative")
    if 2 * ell < r or 2 * ell > n:
        raise InvalidArgumentError(f"need r/2 <= ell <= n/2, got ell={ell}")
    dim = comb(n, ell)
    if q == 0:
        return dim
    if r % 2:
        if distribution != "rademacher":
            raise InvalidArgumentError("odd r is only supported through the Rademacher brute-force path")
        value = expected_trace_bruteforce(n, ell, r, q)
        return int(value)
    starts = [0] if use_symmetry else list(range(dim))
    degree = comb(n - ell, r // 2) * comb(ell, r // 2)
    if workers > 1:
        tasks = [(n, ell, r, q, distribution, starts, [i], budget) for i in range(degree)]
        with ProcessPoolExecutor(workers) as pool:
            total = sum(pool.map(_dfs_task, tasks))
    else:
        total = _dfs_sum(n, ell, r, q, distribution, starts, None, budget)
    return total * dim if use_symmetry else total


def enumerate_closed_walks(n: int, ell: int, r: int, q: int) -> Iterator[TraceWalk]:
    """Every closed walk of length 2q in the even-r Kikuchi graph, contributing or not."""
    if r % 2:
        raise InvalidArgumentError("walk enumeration is implemented for even r")
    graph = _KikuchiGraph(n, ell, r)
    dim = comb(n, ell)
    for s in range(dim):
        stack = [(s, (s,), ())]
        while stack:
            v, path, edges = stack.pop()
            if len(edges) == 2 * q:
                if v == s:
                    yield TraceWalk(
                        tuple(unrank_subset(p, ell, n) for p in path),
                        tuple((unrank_subset(e, r, n),) for e in edges),
                    )
                continue
            for w, e in reversed(graph(v)):
                stack.append((w, path + (w,), edges + (e,)))


# --- dense routes ---------------------------------------------------------------


def _dense_pattern(n: int, ell: int, r: int):
    """Support of the Kikuchi matrix by scanning all index pairs.

    Returns ``rows, cols, terms`` with ``terms`` of shape (nnz, T, k): entry
    ``(rows[a], cols[a])`` is ``sum_t prod_j G[terms[a, t, j]]``.
    """
    sets = [unrank_subset(i, ell, n) for i in range(comb(n, ell))]
    h = (r - 1) // 2
    rows, cols, terms = [], [], []
    for i, I in enumerate(sets):
        for j, J in enumerate(sets):
            removed = sorted(set(I) - set(J))
            added = sorted(set(J) - set(I))
            if r % 2 == 0:
                if 2 * len(removed) == r:
                    rows.append(i)
                    cols.append(j)
                    terms.append([[rank_subset(tuple(sorted(removed + added)))]])
            elif len(removed) == r - 1:
                free = [t for t in range(n) if t not in I and t not in J]
                entry = []
                for t in free:
                    for o1 in combinations(removed, h):
                        o2 = [e for e in removed if e not in o1]
                        for n1 in combinations(added, h):
                            n2 = [e for e in added if e not in n1]
                            entry.append([
                                rank_subset(tuple(sorted(list(o1) + list(n1) + [t]))),
                                rank_subset(tuple(sorted(o2 + n2 + [t]))),
                            ])
                if entry:
                    rows.append(i)
                    cols.append(j)
                    terms.append(entry)
    k = 1 if r % 2 == 0 else 2
    width = max((len(t) for t in terms), default=0)
    return (
        np.array(rows, dtype=np.int64),
        np.array(cols, dtype=np.int64),
        np.array(terms, dtype=np.int64).reshape(len(rows), width, k),
    )


def _batch_matrices(values: np.ndarray, pattern, dim: int) -> np.ndarray:
    """Dense matrices for a batch of tensors; ``values`` has shape (batch, C(n, r))."""
    rows, cols, terms = pattern
    batch = values.shape[0]
    mats = np.zeros((batch, dim, dim), dtype=values.dtype)
    if rows.size:
        entries = np.prod(values[:, terms], axis=3).sum(axis=2)
        mats[:, rows, cols] = entries
    return mats


def _batch_traces(mats: np.ndarray, q: int) -> np.ndarray:
    """Tr(M^{2q}) per matrix as ``|M^q|_F^2`` (M symmetric)."""
    power = mats
    for _ in range(q - 1):
        power = power @ mats
    return np.einsum("bij,bij->b", power, power)


def expected_trace_bruteforce(
    n: int, ell: int, r: int, q: int, max_vars: int = 20, signs: np.ndarray | None = None, chunk: int = 4096
) -> Fraction:
    """Average of Tr(M^{2q}) over all 2^C(n,r) sign tensors, in exact arithmetic.

    ``signs`` overrides the assignments averaged over (rows of +-1 entries).
    """
    if q < 1:
        raise InvalidArgumentError("q must be positive")
    n_vars = comb(n, r)
    dim = comb(n, ell)
    if signs is None and n_vars > max_vars:
        raise ResourceLimitError(f"{n_vars} tensor entries exceed the brute-force limit of {max_vars}")
    if dim > DENSE_CAP:
        raise ResourceLimitError(f"dimension {dim} exceeds dense cap {DENSE_CAP}")
    pattern = _dense_pattern(n, ell, r)
    terms_per_entry = max(pattern[2].shape[1], 1)
    row_bound = comb(n - ell, r // 2) * comb(ell, r // 2) if r % 2 == 0 else comb(ell, r - 1) * comb(n - ell, r - 1)
    if dim * (row_bound * terms_per_entry) ** (2 * q) >= 2**62:
        raise ResourceLimitError("exact traces would overflow int64")
    if signs is not None:
        signs = np.asarray(signs, dtype=np.int64)
        total = sum(int(t) for t in _batch_traces(_batch_matrices(signs, pattern, dim), q))
        return Fraction(total, signs.shape[0])
    count = 1 << n_vars
    bits = np.arange(n_vars, dtype=np.int64)
    total = 0
    for start in range(0, count, chunk):
        idx = np.arange(start, min(start + chunk, count), dtype=np.int64)
        block = 1 - 2 * ((idx[:, None] >> bits) & 1)
        total += sum(int(t) for t in _batch_traces(_batch_matrices(block, pattern, dim), q))
    return Fraction(total, count)


def monte_carlo_trace(
    n: int,
    ell: int,
    r: int,
    q: int,
    distribution: str = "gaussian",
    trials: int = 1000,
    seed: int = 0,
    batch: int = 2000,
    cap: int = DENSE_CAP,
) -> tuple[float, float]:
    """Sample mean and standard error of Tr(M^{2q}) over fresh tensors.

    Trial k reads entries ``k*C(n,r) .. (k+1)*C(n,r)`` of the noise stream
    keyed by ``seed``, so results do not depend on ``batch``.
    """
    _moment_fn(distribution)
    if trials < 1:
        raise InvalidArgumentError("need at least one trial")
    dim = comb(n, ell)
    if dim > cap:
        raise ResourceLimitError(f"dimension {dim} exceeds dense cap {cap}")
    n_vars = comb(n, r)
    pattern = _dense_pattern(n, ell, r)
    traces = np.empty(trials)
    for start in range(0, trials, batch):
        stop = min(start + batch, trials)
        values = noise_block(distribution, seed, start * n_vars, (stop - start) * n_vars).reshape(stop - start, n_vars)
        traces[start:stop] = _batch_traces(_batch_matrices(values, pattern, dim), q)
    mean = float(traces.mean())
    se = float(traces.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, se


# --- lower-bound family ---------------------------------------------------------


def _family_shape(n: int, ell: int, r: int, q: int) -> tuple[int, int]:
    if r % 2:
        raise InvalidArgumentError("the lower-bound family is defined for even r")
    h = r // 2
    if ell % h:
        raise InvalidArgumentError(f"r/2={h} must divide ell={ell}")
    m = ell // h
    if q % m:
        raise InvalidArgumentError(f"chunk length 2m={2 * m} must divide 2q={2 * q}")
    if n - ell < h:
        raise InvalidArgumentError("no room outside the start set")
    return h, m


def lower_bound_family_count(n: int, ell: int, r: int, q: int) -> int:
    """``C(n,ell) * [C(ell; h,..,h) * C(2m; 2,..,2) * C(n-ell, h)^m]^(q/m)`` with
    ``h = r/2`` and ``m = ell/h`` buckets.

    This counts labeled choices (bucket labels, step order, fresh sets);
    for ``m >= 2`` several choices describe the same walk and some describe
    no walk at all, see :func:`generate_lower_bound_walks`.
    """
    h, m = _family_shape(n, ell, r, q)
    per_chunk = multinomial(ell, [h] * m) * multinomial(2 * m, [2] * m) * comb(n - ell, h) ** m
    return comb(n, ell) * per_chunk ** (q // m)


def _ordered_buckets(elements: tuple[int, ...], h: int):
    if not elements:
        yield ()
        return
    for bucket in combinations(elements, h):
        rest = tuple(e for e in elements if e not in bucket)
        for tail in _ordered_buckets(rest, h):
            yield (bucket,) + tail


def _canonical_orders(m: int):
    """Words over ``range(m)`` using each letter twice, letters first appearing in order."""

    def extend(word, used, seen):
        if len(word) == 2 * m:
            yield tuple(word)
            return
        for b in range(min(seen + 1, m)):
            if used[b] < 2:
                used[b] += 1
                yield from extend(word + [b], used, max(seen, b + 1) if b == seen else seen)
                used[b] -= 1

    yield from extend([], [0] * m, 0)


def _chunk_walks(start: Subset, n: int, h: int, m: int):
    """Distinct valid chunks from ``start``: lists of (next set, edge) per step."""
    outside = tuple(e for e in range(n) if e not in start)
    fresh_sets = list(combinations(outside, h))
    orders = list(_canonical_orders(m))
    for buckets in _ordered_buckets(start, h):
        for order in orders:
            for fresh in product(fresh_sets, repeat=m):
                current = set(start)
                away = [False] * m
                steps = []
                for b in order:
                    if not away[b]:
                        if current.intersection(fresh[b]):
                            break
                        current.difference_update(buckets[b])
                        current.update(fresh[b])
                    else:
                        current.difference_update(fresh[b])
                        current.update(buckets[b])
                    away[b] = not away[b]
                    steps.append((tuple(sorted(current)), tuple(sorted(buckets[b] + fresh[b]))))
                else:
                    yield steps


def generate_lower_bound_walks(n: int, ell: int, r: int, q: int, limit: int | None = None) -> Iterator[TraceWalk]:
    """Distinct valid walks of the chunked family, in a fixed order.

    A walk from start set S is q/m chunks of length 2m. In each chunk S is
    split into m buckets of h = r/2 vertices; each bucket is swapped for a
    fresh h-set outside S and later swapped back. Fresh sets that collide
    with vertices currently in the walk are skipped, and bucket labels are
    fixed by order of first use so each walk is emitted once.
    """
    h, m = _family_shape(n, ell, r, q)
    emitted = 0
    for s in range(comb(n, ell)):
        start = unrank_subset(s, ell, n)
        chunks = list(_chunk_walks(start, n, h, m))
        for combo in product(chunks, repeat=q // m):
            if limit is not None and emitted >= limit:
                return
            steps = [step for chunk in combo for step in chunk]
            yield TraceWalk((start,) + tuple(v for v, _ in steps), tuple((e,) for _, e in steps))
            emitted += 1

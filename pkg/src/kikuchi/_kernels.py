"""numba row-streaming kernels for the Kikuchi matvec.

Every output row is accumulated by one thread in a fixed neighbor order, so
results do not depend on the thread count.
"""
import numpy as np
from numba import config, njit, prange

# TBB in the base image is too old; numba warns on every first parallel call
if config.THREADING_LAYER == "default":
    config.THREADING_LAYER = "omp"


@njit(cache=True)
def _unrank(idx, k, n, table, out):
    rem = idx
    hi = n
    for i in range(k, 0, -1):
        c = hi - 1
        while table[c, i] > rem:
            c -= 1
        out[i - 1] = c
        rem -= table[c, i]
        hi = c


@njit(cache=True)
def _merge_rank(a, na, b, nb, table):
    """Colex rank of the union of two disjoint sorted runs."""
    i = 0
    j = 0
    r = 0
    pos = 1
    while i < na or j < nb:
        if j >= nb or (i < na and a[i] < b[j]):
            r += table[a[i], pos]
            i += 1
        else:
            r += table[b[j], pos]
            j += 1
        pos += 1
    return r


@njit(cache=True)
def _complement(subset, k, n, out):
    j = 0
    p = 0
    for v in range(n):
        if p < k and subset[p] == v:
            p += 1
        else:
            out[j] = v
            j += 1


@njit(cache=True)
def _split(src, k, pos, sel, rest):
    """sel = src[pos], rest = the remaining elements; both stay sorted."""
    p = 0
    s = 0
    t = 0
    m = pos.shape[0]
    for i in range(k):
        if p < m and pos[p] == i:
            sel[s] = src[i]
            s += 1
            p += 1
        else:
            rest[t] = src[i]
            t += 1


@njit(cache=True, parallel=True)
def matvec_even(x, g, n, ell, h, table, in_combos, out_combos, y):
    dim = x.shape[0]
    for i in prange(dim):
        subset = np.empty(ell, np.int64)
        comp = np.empty(n - ell, np.int64)
        removed = np.empty(h, np.int64)
        kept = np.empty(ell - h, np.int64)
        added = np.empty(h, np.int64)
        _unrank(i, ell, n, table, subset)
        _complement(subset, ell, n, comp)
        acc = 0.0
        for a in range(in_combos.shape[0]):
            _split(subset, ell, in_combos[a], removed, kept)
            for b in range(out_combos.shape[0]):
                for c in range(h):
                    added[c] = comp[out_combos[b, c]]
                j = _merge_rank(kept, ell - h, added, h, table)
                e = _merge_rank(removed, h, added, h, table)
                acc += g[e] * x[j]
        y[i] = acc


@njit(cache=True, parallel=True)
def matvec_odd(x, g, n, ell, r, table, in_combos, out_combos, splits, y):
    dim = x.shape[0]
    h = (r - 1) // 2
    m = r - 1
    for i in prange(dim):
        subset = np.empty(ell, np.int64)
        comp = np.empty(n - ell, np.int64)
        removed = np.empty(m, np.int64)
        kept = np.empty(ell - m, np.int64)
        added = np.empty(m, np.int64)
        unused = np.empty(n - ell - m, np.int64)
        o1 = np.empty(h, np.int64)
        o2 = np.empty(h, np.int64)
        n1 = np.empty(h, np.int64)
        n2 = np.empty(h, np.int64)
        e1 = np.empty(r, np.int64)
        e2 = np.empty(r, np.int64)
        _unrank(i, ell, n, table, subset)
        _complement(subset, ell, n, comp)
        acc = 0.0
        for a in range(in_combos.shape[0]):
            _split(subset, ell, in_combos[a], removed, kept)
            for b in range(out_combos.shape[0]):
                _split(comp, n - ell, out_combos[b], added, unused)
                j = _merge_rank(kept, ell - m, added, m, table)
                val = 0.0
                for sa in range(splits.shape[0]):
                    _split(removed, m, splits[sa], o1, o2)
                    for sb in range(splits.shape[0]):
                        _split(added, m, splits[sb], n1, n2)
                        for ti in range(n - ell - m):
                            t = unused[ti]
                            _with_vertex(o1, n1, h, t, e1)
                            _with_vertex(o2, n2, h, t, e2)
                            val += g[_rank(e1, r, table)] * g[_rank(e2, r, table)]
                acc += val * x[j]
        y[i] = acc


@njit(cache=True)
def _with_vertex(a, b, h, t, out):
    """Sorted union of disjoint sorted runs a, b (length h each) and {t}."""
    i = 0
    j = 0
    placed = False
    for pos in range(2 * h + 1):
        ai = a[i] if i < h else n_inf()
        bj = b[j] if j < h else n_inf()
        if not placed and t < ai and t < bj:
            out[pos] = t
            placed = True
        elif ai < bj:
            out[pos] = ai
            i += 1
        else:
            out[pos] = bj
            j += 1


@njit(cache=True)
def n_inf():
    return np.int64(1) << 62


@njit(cache=True)
def _rank(s, k, table):
    r = 0
    for i in range(k):
        r += table[s[i], i + 1]
    return r

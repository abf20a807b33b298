"""Hot inner loops, compiled with numba when available.

Set ``OFFLOADNET_JIT=0`` to force the pure-numpy path. Both paths take the
same CSR arrays and return bit-compatible results for the contention loop
(the sums are taken in the same neighbor order).
"""
import heapq
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_JIT = numba is not None and os.environ.get("OFFLOADNET_JIT", "1") != "0"


# ---------------------------------------------------------------- numpy path

def _csr_rows(indptr):
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def _neighbor_sum_np(indptr, indices, values):
    rows = _csr_rows(indptr)
    return np.bincount(rows, weights=values[indices], minlength=len(indptr) - 1)


def contention_forward_np(rates, arrivals, indptr, indices, K):
    n = rates.shape[0]
    mus = np.empty((K + 1, n))
    deg = np.diff(indptr).astype(np.float64)
    mus[0] = rates / (1.0 + deg)
    for k in range(1, K + 1):
        busy = np.minimum(arrivals / mus[k - 1], 1.0)
        mus[k] = rates / (1.0 + _neighbor_sum_np(indptr, indices, busy))
    return mus


def contention_backward_np(rates, arrivals, mus, indptr, indices, grad_mu):
    K = mus.shape[0] - 1
    gx = np.zeros_like(arrivals)
    g = grad_mu.copy()
    for k in range(K, 0, -1):
        gp = -g * mus[k] * mus[k] / rates
        gb = _neighbor_sum_np(indptr, indices, gp)
        prev = mus[k - 1]
        on_ratio = arrivals / prev <= 1.0
        gx += np.where(on_ratio, gb / prev, 0.0)
        g = np.where(on_ratio, -gb * arrivals / (prev * prev), 0.0)
    return gx


def dijkstra_np(indptr, nbr, eid, weights, physical, source):
    n = len(indptr) - 1
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    pedge = np.full(n, -1, dtype=np.int64)
    hops = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for k in range(indptr[u], indptr[u + 1]):
            v = nbr[k]
            if done[v]:
                continue
            e = eid[k]
            nd = d + weights[e]
            if nd < dist[v] or (nd == dist[v] and u < parent[v]):
                improved = nd < dist[v]
                dist[v] = nd
                parent[v] = u
                pedge[v] = e
                hops[v] = hops[u] + (1 if physical[e] else 0)
                if improved:
                    heapq.heappush(heap, (nd, int(v)))
    return dist, parent, pedge, hops


def laplacian_apply_np(indptr, indices, coef, X, self_form):
    """Bracket term of the graph convolution for every vertex.

    coef[k] = 1/sqrt(d(i) d(j)) for the k-th CSR entry (i -> j).
    self_form: subtract X[i] * sum(coef) instead of sum(coef * X[j]).
    """
    rows = _csr_rows(indptr)
    if self_form:
        s = np.bincount(rows, weights=coef, minlength=X.shape[0])
        return X * (1.0 - s)[:, None]
    out = X.copy()
    np.subtract.at(out, rows, coef[:, None] * X[indices])
    return out


# ---------------------------------------------------------------- numba path

if numba is not None:
    njit = numba.njit(cache=True)

    @njit
    def contention_forward_jit(rates, arrivals, indptr, indices, K):
        n = rates.shape[0]
        mus = np.empty((K + 1, n))
        busy = np.empty(n)
        for i in range(n):
            mus[0, i] = rates[i] / (1.0 + (indptr[i + 1] - indptr[i]))
        for k in range(1, K + 1):
            for i in range(n):
                busy[i] = min(arrivals[i] / mus[k - 1, i], 1.0)
            for i in range(n):
                p = 0.0
                for q in range(indptr[i], indptr[i + 1]):
                    p += busy[indices[q]]
                mus[k, i] = rates[i] / (1.0 + p)
        return mus

    @njit
    def contention_backward_jit(rates, arrivals, mus, indptr, indices, grad_mu):
        K = mus.shape[0] - 1
        n = rates.shape[0]
        gx = np.zeros(n)
        g = grad_mu.copy()
        gp = np.empty(n)
        for k in range(K, 0, -1):
            for i in range(n):
                gp[i] = -g[i] * mus[k, i] * mus[k, i] / rates[i]
            for i in range(n):
                gb = 0.0
                for q in range(indptr[i], indptr[i + 1]):
                    gb += gp[indices[q]]
                prev = mus[k - 1, i]
                if arrivals[i] / prev <= 1.0:
                    gx[i] += gb / prev
                    g[i] = -gb * arrivals[i] / (prev * prev)
                else:
                    g[i] = 0.0
        return gx

    @njit
    def dijkstra_jit(indptr, nbr, eid, weights, physical, source):
        n = indptr.shape[0] - 1
        dist = np.full(n, np.inf)
        parent = np.full(n, -1, dtype=np.int64)
        pedge = np.full(n, -1, dtype=np.int64)
        hops = np.zeros(n, dtype=np.int64)
        done = np.zeros(n, dtype=np.bool_)
        dist[source] = 0.0
        heap = [(0.0, np.int64(source))]
        while len(heap) > 0:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for k in range(indptr[u], indptr[u + 1]):
                v = nbr[k]
                if done[v]:
                    continue
                e = eid[k]
                nd = d + weights[e]
                if nd < dist[v] or (nd == dist[v] and u < parent[v]):
                    improved = nd < dist[v]
                    dist[v] = nd
                    parent[v] = u
                    pedge[v] = e
                    hops[v] = hops[u] + (1 if physical[e] else 0)
                    if improved:
                        heapq.heappush(heap, (nd, np.int64(v)))
        return dist, parent, pedge, hops

    @njit
    def laplacian_apply_jit(indptr, indices, coef, X, self_form):
        n, g = X.shape
        out = X.copy()
        for i in range(n):
            if self_form:
                s = 0.0
                for q in range(indptr[i], indptr[i + 1]):
                    s += coef[q]
                for c in range(g):
                    out[i, c] = X[i, c] * (1.0 - s)
            else:
                for q in range(indptr[i], indptr[i + 1]):
                    j = indices[q]
                    w = coef[q]
                    for c in range(g):
                        out[i, c] -= w * X[j, c]
        return out


if USE_JIT:
    contention_forward = contention_forward_jit
    contention_backward = contention_backward_jit
    dijkstra = dijkstra_jit
    laplacian_apply = laplacian_apply_jit
else:
    contention_forward = contention_forward_np
    contention_backward = contention_backward_np
    dijkstra = dijkstra_np
    laplacian_apply = laplacian_apply_np

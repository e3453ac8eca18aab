"""Compiled kernels: Z/2 column reduction with clearing, and an independent Z/2 rank."""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _symdiff(a, b):
    out = np.empty(a.size + b.size, dtype=np.int64)
    i = 0
    j = 0
    k = 0
    while i < a.size and j < b.size:
        if a[i] < b[j]:
            out[k] = a[i]
            i += 1
            k += 1
        elif a[i] > b[j]:
            out[k] = b[j]
            j += 1
            k += 1
        else:
            i += 1
            j += 1
    while i < a.size:
        out[k] = a[i]
        i += 1
        k += 1
    while j < b.size:
        out[k] = b[j]
        j += 1
        k += 1
    return out[:k]


@numba.njit(cache=True, nogil=True)
def reduce_boundary(col_ptr, col_idx, dims, maxdim):
    """Standard reduction over Z/2, dimensions processed top-down with clearing.

    Columns are in filtration order and store sorted face positions.
    Returns (low, owner, column additions): low[j] is the pivot row of
    column j (-1 for zero columns), owner[i] the column whose pivot is row i.
    """
    N = dims.size
    owner = np.full(N, -1, dtype=np.int64)
    low = np.full(N, -1, dtype=np.int64)
    cleared = np.zeros(N, dtype=np.bool_)
    store_ptr = np.full(N, -1, dtype=np.int64)
    store_len = np.zeros(N, dtype=np.int64)
    pool = np.empty(max(16, 2 * col_idx.size), dtype=np.int64)
    pool_n = 0
    ops = 0
    order = np.argsort(dims, kind="mergesort")
    starts = np.zeros(maxdim + 2, dtype=np.int64)
    for j in range(N):
        starts[dims[j] + 1] += 1
    for d in range(1, maxdim + 2):
        starts[d] += starts[d - 1]
    for dim in range(maxdim, 0, -1):
        for t in range(starts[dim], starts[dim + 1]):
            j = order[t]
            if cleared[j]:
                continue
            a = col_idx[col_ptr[j]:col_ptr[j + 1]].copy()
            while a.size > 0:
                k = owner[a[a.size - 1]]
                if k < 0:
                    break
                a = _symdiff(a, pool[store_ptr[k]:store_ptr[k] + store_len[k]])
                ops += 1
            if a.size > 0:
                l = a[a.size - 1]
                owner[l] = j
                low[j] = l
                cleared[l] = True
                if pool_n + a.size > pool.size:
                    grown = np.empty(max(2 * pool.size, pool_n + a.size), dtype=np.int64)
                    grown[:pool_n] = pool[:pool_n]
                    pool = grown
                pool[pool_n:pool_n + a.size] = a
                store_ptr[j] = pool_n
                store_len[j] = a.size
                pool_n += a.size
    return low, owner, ops


@numba.njit(cache=True, nogil=True)
def gf2_rank(M):
    """Rank over Z/2 of a 0/1 matrix by plain Gaussian elimination (copy is modified)."""
    A = M.copy()
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = -1
        for i in range(r, rows):
            if A[i, c]:
                piv = i
                break
        if piv < 0:
            continue
        if piv != r:
            for k in range(cols):
                tmp = A[r, k]
                A[r, k] = A[piv, k]
                A[piv, k] = tmp
        for i in range(rows):
            if i != r and A[i, c]:
                for k in range(c, cols):
                    A[i, k] ^= A[r, k]
        r += 1
        if r == rows:
            break
    return r

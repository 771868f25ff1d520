# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled partition kernel.

Walks each random partition tree only along cells that hold both query
points and subsample points, and accumulates the per-tree leaf shares
``1 / |leaf|`` into a dense ``(queries, columns)`` buffer.  The arithmetic
mirrors ``_partition_py`` operation for operation so both backends produce
identical bits.
"""

from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free, qsort

import numpy as np

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t mc_mix64(uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static inline uint64_t mc_root_key(uint64_t seed, uint64_t arm, uint64_t tree) {
        return mc_mix64(mc_mix64(mc_mix64(seed) ^ arm) ^ tree);
    }
    static inline uint64_t mc_child_key(uint64_t key, int side) {
        return mc_mix64(key ^ (side ? 0x632BE59BD9B4E019ULL : 0x8CB92BA72F3D8DD7ULL));
    }
    static inline uint64_t mc_coord(uint64_t key, uint64_t d) {
        return mc_mix64(key ^ 0xD6E8FEB86659FD93ULL) % d;
    }
    static inline double mc_fraction(uint64_t key) {
        return (double)(mc_mix64(key ^ 0xA0761D6478BD642FULL) >> 11) * (1.0 / 9007199254740992.0);
    }
    static int mc_cmp_double(const void* a, const void* b) {
        double x = *(const double*)a, y = *(const double*)b;
        return (x > y) - (x < y);
    }
    """
    uint64_t mc_root_key(uint64_t seed, uint64_t arm, uint64_t tree) nogil
    uint64_t mc_child_key(uint64_t key, int side) nogil
    uint64_t mc_coord(uint64_t key, uint64_t d) nogil
    double mc_fraction(uint64_t key) nogil
    int mc_cmp_double(const void* a, const void* b) nogil


cdef struct Ctx:
    const double* X
    const double* XQ
    Py_ssize_t d
    double bound2
    int honest
    int max_depth
    Py_ssize_t min_leaf
    const int64_t* col_of
    double* W
    Py_ssize_t ncols
    int64_t* n_used
    double* lo
    double* hi
    double* buf


cdef inline Py_ssize_t _partition_rows(const double* A, Py_ssize_t d, int64_t* idx,
                                       Py_ssize_t n, Py_ssize_t c, double split) noexcept nogil:
    # in-place: rows with A[row, c] < split first; returns their count
    cdef Py_ssize_t i = 0, j = n - 1
    cdef int64_t tmp
    while i <= j:
        if A[idx[i] * d + c] < split:
            i += 1
        else:
            tmp = idx[i]
            idx[i] = idx[j]
            idx[j] = tmp
            j -= 1
    return i


cdef int _recurse(Ctx* ctx, uint64_t key, int depth,
                  int64_t* est, Py_ssize_t ne,
                  int64_t* st, Py_ssize_t ns,
                  int64_t* q, Py_ssize_t nq) noexcept nogil:
    cdef Py_ssize_t k, a, b, d = ctx.d
    cdef double w, diam2 = 0.0, inc, split, lo_c, hi_c
    cdef Py_ssize_t c, ne_left, ns_left, nq_left
    cdef double* row
    cdef int status

    if nq == 0 or ne == 0:
        return 0
    for k in range(d):
        w = ctx.hi[k] - ctx.lo[k]
        diam2 += w * w
    if diam2 <= ctx.bound2:
        if ne >= ctx.min_leaf:
            inc = 1.0 / ne
            for a in range(nq):
                row = ctx.W + q[a] * ctx.ncols
                for b in range(ne):
                    row[ctx.col_of[est[b]]] += inc
                ctx.n_used[q[a]] += 1
        return 0
    if depth >= ctx.max_depth:
        return 1

    c = <Py_ssize_t>mc_coord(key, <uint64_t>d)
    lo_c = ctx.lo[c]
    hi_c = ctx.hi[c]
    if ctx.honest:
        if ns > 0:
            for k in range(ns):
                ctx.buf[k] = ctx.X[st[k] * d + c]
            qsort(ctx.buf, ns, sizeof(double), mc_cmp_double)
            if ns % 2 == 1:
                split = ctx.buf[ns // 2]
            else:
                split = (ctx.buf[ns // 2 - 1] + ctx.buf[ns // 2]) * 0.5
        else:
            split = lo_c + 0.5 * (hi_c - lo_c)
    else:
        split = lo_c + mc_fraction(key) * (hi_c - lo_c)
    if not (lo_c < split and split < hi_c):
        split = lo_c + 0.5 * (hi_c - lo_c)

    ne_left = _partition_rows(ctx.X, d, est, ne, c, split)
    ns_left = _partition_rows(ctx.X, d, st, ns, c, split)
    nq_left = _partition_rows(ctx.XQ, d, q, nq, c, split)

    ctx.hi[c] = split
    status = _recurse(ctx, mc_child_key(key, 0), depth + 1,
                      est, ne_left, st, ns_left, q, nq_left)
    ctx.hi[c] = hi_c
    if status:
        return status
    ctx.lo[c] = split
    status = _recurse(ctx, mc_child_key(key, 1), depth + 1,
                      est + ne_left, ne - ne_left, st + ns_left, ns - ns_left,
                      q + nq_left, nq - nq_left)
    ctx.lo[c] = lo_c
    return status


cdef int _run_chunk(Ctx* ctx, const double* box_lo, const double* box_hi,
                    uint64_t seed, uint64_t arm,
                    const int64_t* est_idx, Py_ssize_t s_est,
                    const int64_t* st_idx, Py_ssize_t s_st,
                    const int64_t* tree_ids, Py_ssize_t n_trees,
                    Py_ssize_t q_start, Py_ssize_t q_stop) noexcept nogil:
    cdef Py_ssize_t t, k, nq = q_stop - q_start
    cdef int status = 0
    cdef int64_t* est = <int64_t*>malloc((s_est + 1) * sizeof(int64_t))
    cdef int64_t* st = <int64_t*>malloc((s_st + 1) * sizeof(int64_t))
    cdef int64_t* q = <int64_t*>malloc((nq + 1) * sizeof(int64_t))
    if est == NULL or st == NULL or q == NULL:
        free(est)
        free(st)
        free(q)
        return 2
    for t in range(n_trees):
        for k in range(s_est):
            est[k] = est_idx[t * s_est + k]
        for k in range(s_st):
            st[k] = st_idx[t * s_st + k]
        for k in range(nq):
            q[k] = q_start + k
        for k in range(ctx.d):
            ctx.lo[k] = box_lo[k]
            ctx.hi[k] = box_hi[k]
        status = _recurse(ctx, mc_root_key(seed, arm, <uint64_t>tree_ids[t]), 0,
                          est, s_est, st, s_st, q, nq)
        if status:
            break
    free(est)
    free(st)
    free(q)
    return status


def accumulate_weights(const double[:, ::1] X, const double[::1] box_lo,
                       const double[::1] box_hi, double bound2, bint honest,
                       int max_depth, Py_ssize_t min_leaf, uint64_t seed, uint64_t arm,
                       const int64_t[:, ::1] est_idx, const int64_t[:, ::1] struct_idx,
                       const int64_t[::1] tree_ids, const double[:, ::1] XQ,
                       const int64_t[::1] col_of, double[:, ::1] W_sum,
                       int64_t[::1] n_used, Py_ssize_t q_start=0, Py_ssize_t q_stop=-1):
    """Accumulate leaf shares of every tree into ``W_sum`` rows ``q_start:q_stop``.

    Returns 0 on success and 1 when a cell still violates the diameter bound
    at ``max_depth``.  Releases the GIL, so disjoint query ranges may run in
    separate threads.
    """
    cdef Ctx ctx
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t n_trees = est_idx.shape[0]
    cdef int status
    cdef double* lo
    cdef double* hi
    cdef double* buf
    if q_stop < 0:
        q_stop = XQ.shape[0]
    if n_trees == 0 or q_stop <= q_start:
        return 0
    if XQ.shape[1] != d or box_lo.shape[0] != d or box_hi.shape[0] != d:
        raise ValueError("dimension mismatch between points, queries and box")
    if W_sum.shape[0] != XQ.shape[0] or n_used.shape[0] != XQ.shape[0]:
        raise ValueError("output buffers do not match the query count")
    lo = <double*>malloc(d * sizeof(double))
    hi = <double*>malloc(d * sizeof(double))
    buf = <double*>malloc((struct_idx.shape[1] + 1) * sizeof(double))
    if lo == NULL or hi == NULL or buf == NULL:
        free(lo)
        free(hi)
        free(buf)
        raise MemoryError()
    ctx.X = &X[0, 0]
    ctx.XQ = &XQ[0, 0]
    ctx.d = d
    ctx.bound2 = bound2
    ctx.honest = honest
    ctx.max_depth = max_depth
    ctx.min_leaf = min_leaf if min_leaf > 1 else 1
    ctx.col_of = &col_of[0]
    ctx.W = &W_sum[0, 0]
    ctx.ncols = W_sum.shape[1]
    ctx.n_used = &n_used[0]
    ctx.lo = lo
    ctx.hi = hi
    ctx.buf = buf
    with nogil:
        status = _run_chunk(&ctx, &box_lo[0], &box_hi[0], seed, arm,
                            &est_idx[0, 0] if est_idx.shape[1] > 0 else <const int64_t*>NULL,
                            est_idx.shape[1],
                            &struct_idx[0, 0] if struct_idx.shape[1] > 0 else <const int64_t*>NULL,
                            struct_idx.shape[1],
                            &tree_ids[0], n_trees, q_start, q_stop)
    free(lo)
    free(hi)
    free(buf)
    if status == 2:
        raise MemoryError()
    return status

"""Pure-Python partition kernel, used when the compiled extension is absent.

Same contract and the same floating point operations as ``_partition.pyx``.
"""

import numpy as np

from ._keys import child_key, root_key, split_coordinate, split_fraction


def cell_diameter_sq(lo, hi):
    # sequential sum; the compiled kernel adds in the same order
    total = 0.0
    for a, b in zip(lo.tolist(), hi.tolist()):
        w = b - a
        total += w * w
    return total


def choose_split(X, lo, hi, key, honest, struct_rows):
    """Split coordinate and value for the cell ``[lo, hi)`` owned by ``key``.

    Extremely honest cells cut uniformly at random; honest cells cut at the
    median of the structure points inside the cell (midpoint when empty).
    """
    d = lo.shape[0]
    c = split_coordinate(key, d)
    lo_c = float(lo[c])
    hi_c = float(hi[c])
    if honest:
        ns = len(struct_rows)
        if ns > 0:
            vals = np.sort(X[struct_rows, c])
            if ns % 2 == 1:
                split = float(vals[ns // 2])
            else:
                split = (float(vals[ns // 2 - 1]) + float(vals[ns // 2])) * 0.5
        else:
            split = lo_c + 0.5 * (hi_c - lo_c)
    else:
        split = lo_c + split_fraction(key) * (hi_c - lo_c)
    if not (lo_c < split < hi_c):
        split = lo_c + 0.5 * (hi_c - lo_c)
    return c, split


def _recurse(state, lo, hi, key, depth, est, st, q):
    if q.size == 0 or est.size == 0:
        return 0
    X, XQ = state["X"], state["XQ"]
    if cell_diameter_sq(lo, hi) <= state["bound2"]:
        ne = est.size
        if ne >= state["min_leaf"]:
            inc = 1.0 / ne
            cols = state["col_of"][est]
            W = state["W"]
            for qi in q.tolist():
                W[qi, cols] += inc
            state["n_used"][q] += 1
        return 0
    if depth >= state["max_depth"]:
        return 1
    c, split = choose_split(X, lo, hi, key, state["honest"], st)
    est_left = X[est, c] < split
    st_left = X[st, c] < split
    q_left = XQ[q, c] < split

    hi_c = hi[c]
    hi[c] = split
    status = _recurse(state, lo, hi, child_key(key, 0), depth + 1,
                      est[est_left], st[st_left], q[q_left])
    hi[c] = hi_c
    if status:
        return status
    lo_c = lo[c]
    lo[c] = split
    status = _recurse(state, lo, hi, child_key(key, 1), depth + 1,
                      est[~est_left], st[~st_left], q[~q_left])
    lo[c] = lo_c
    return status


def accumulate_weights(X, box_lo, box_hi, bound2, honest, max_depth, min_leaf,
                       seed, arm, est_idx, struct_idx, tree_ids, XQ, col_of,
                       W_sum, n_used, q_start=0, q_stop=-1):
    if q_stop < 0:
        q_stop = XQ.shape[0]
    if est_idx.shape[0] == 0 or q_stop <= q_start:
        return 0
    state = {
        "X": X, "XQ": XQ, "bound2": bound2, "honest": bool(honest),
        "max_depth": max_depth, "min_leaf": max(int(min_leaf), 1),
        "col_of": col_of, "W": W_sum, "n_used": n_used,
    }
    queries = np.arange(q_start, q_stop, dtype=np.int64)
    for t in range(est_idx.shape[0]):
        key = root_key(int(seed), int(arm), int(tree_ids[t]))
        status = _recurse(state, np.array(box_lo, dtype=float), np.array(box_hi, dtype=float),
                          key, 0, np.asarray(est_idx[t]), np.asarray(struct_idx[t]), queries)
        if status:
            return status
    return 0

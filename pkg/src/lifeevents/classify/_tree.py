"""Binary CART on weighted samples (gini), compiled with numba.

A tree is stored as flat arrays: ``feature`` (-1 at leaves), ``threshold``,
``left``, ``right`` and ``value`` (weighted fraction of positives).
Rows with ``x[feature] <= threshold`` go left.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _cost(pos, w):
    # w * gini = 2 * pos * (w - pos) / w
    if w <= 0.0:
        return 0.0
    return 2.0 * pos * (w - pos) / w


@njit(cache=True)
def build_tree(X, y, w, max_depth, max_features, min_samples_split, random_split, seed):
    np.random.seed(seed)
    n, d = X.shape
    cap = 2 * n + 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    # each stack entry is a node id plus the slice [start, stop) of ``order``
    order = np.flatnonzero(w > 0)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = order.size
    stack_depth[0] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(d)
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        idx = order[lo:hi]
        wt = 0.0
        pos = 0.0
        for i in idx:
            wt += w[i]
            pos += w[i] * y[i]
        value[node] = pos / wt if wt > 0 else 0.0
        if depth >= max_depth or idx.size < min_samples_split or pos <= 0.0 or pos >= wt:
            continue
        parent = _cost(pos, wt)
        best_gain = 1e-12
        best_f = -1
        best_t = 0.0
        # shuffle features; look at ``max_features`` of them, more if none splits
        for j in range(d):
            k = j + np.random.randint(d - j)
            tmp = feats[j]
            feats[j] = feats[k]
            feats[k] = tmp
        tried = 0
        for j in range(d):
            if tried >= max_features and best_f >= 0:
                break
            f = feats[j]
            xs = X[idx, f]
            lo_v = xs.min()
            hi_v = xs.max()
            if hi_v <= lo_v:
                continue
            tried += 1
            if random_split:
                t = lo_v + np.random.random() * (hi_v - lo_v)
                if t >= hi_v:
                    t = lo_v
                wl = 0.0
                pl = 0.0
                for i in idx:
                    if X[i, f] <= t:
                        wl += w[i]
                        pl += w[i] * y[i]
                gain = parent - _cost(pl, wl) - _cost(pos - pl, wt - wl)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
            else:
                srt = np.argsort(xs, kind="mergesort")
                wl = 0.0
                pl = 0.0
                for m in range(srt.size - 1):
                    i = idx[srt[m]]
                    wl += w[i]
                    pl += w[i] * y[i]
                    a = xs[srt[m]]
                    b = xs[srt[m + 1]]
                    if b <= a:
                        continue
                    gain = parent - _cost(pl, wl) - _cost(pos - pl, wt - wl)
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_t = 0.5 * (a + b)
                        if best_t >= b:
                            best_t = a
        if best_f < 0 or n_nodes + 2 > cap:
            continue
        # partition order[lo:hi] in place
        m = lo
        for q in range(lo, hi):
            if X[order[q], best_f] <= best_t:
                tmp = order[m]
                order[m] = order[q]
                order[q] = tmp
                m += 1
        if m == lo or m == hi:
            continue
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[top] = n_nodes + 1
        stack_lo[top] = m
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = m
        stack_depth[top] = depth + 1
        top += 1
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out

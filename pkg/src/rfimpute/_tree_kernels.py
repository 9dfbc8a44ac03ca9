"""Compiled CART growing and traversal.

Trees are stored as flat node arrays. ``feature[i] == -1`` marks a leaf. Rows
with ``x[feature] <= threshold`` go to ``left``.

Randomness comes from a splitmix64 stream whose state is passed explicitly, so
kernels can run concurrently (``nogil``) without shared RNG state.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# relative tolerance below which a criterion gain counts as zero or as a tie
GAIN_RTOL = 1e-11


@njit(cache=True, nogil=True)
def _splitmix(state):
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def _randint(state, k):
    return np.int64((_splitmix(state) >> _S11) % np.uint64(k))


@njit(cache=True, nogil=True)
def grow(X, y_reg, y_cls, n_classes, sample, m, min_node, seed):
    """Grow one unpruned tree on the rows listed in ``sample`` (duplicates allowed).

    n_classes == 0 selects regression (variance reduction on ``y_reg``);
    otherwise classification (Gini decrease on ``y_cls`` in [0, n_classes)).
    """
    n = sample.shape[0]
    n_feat = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_out = max(n_classes, 1)
    counts = np.zeros((cap, n_out))
    node_size = np.zeros(cap, dtype=np.int64)

    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)

    idx = sample.copy()
    vals = np.empty(n)
    perm = np.arange(n_feat)
    chosen = np.empty(m, dtype=np.int64)
    cl = np.zeros(n_out)
    cr = np.zeros(n_out)

    # stack of (node, start, end)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    sp = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        nn = end - start
        node_size[node] = nn

        # node statistics
        s = 0.0
        s2 = 0.0
        sq_total = 0.0
        if n_classes == 0:
            for k in range(start, end):
                v = y_reg[idx[k]]
                s += v
                s2 += v * v
            value[node] = s / nn
            impurity = s2 - s * s / nn
            tol = GAIN_RTOL * (s2 + 1e-300)
            pure = impurity <= tol
        else:
            for c in range(n_classes):
                counts[node, c] = 0.0
            for k in range(start, end):
                counts[node, y_cls[idx[k]]] += 1.0
            n_present = 0
            for c in range(n_classes):
                sq_total += counts[node, c] * counts[node, c]
                if counts[node, c] > 0:
                    n_present += 1
            tol = GAIN_RTOL * nn
            pure = n_present <= 1

        if nn < min_node or pure:
            continue

        # draw m features without replacement, then scan them in index order
        for k in range(n_feat):
            perm[k] = k
        for k in range(m):
            r = k + _randint(state, n_feat - k)
            tmp = perm[k]
            perm[k] = perm[r]
            perm[r] = tmp
        for k in range(m):
            chosen[k] = perm[k]
        chosen.sort()

        best_gain = tol
        best_feat = -1
        best_thr = 0.0
        for ci in range(m):
            f = chosen[ci]
            for k in range(nn):
                vals[k] = X[idx[start + k], f]
            order = np.argsort(vals[:nn], kind="mergesort")
            if n_classes == 0:
                sl = 0.0
                for k in range(nn - 1):
                    sl += y_reg[idx[start + order[k]]]
                    a = vals[order[k]]
                    b = vals[order[k + 1]]
                    if a < b:
                        nl = k + 1
                        nr = nn - nl
                        sr = s - sl
                        gain = sl * sl / nl + sr * sr / nr - s * s / nn
                        if gain > best_gain + (tol if best_feat >= 0 else 0.0):
                            best_gain = gain
                            best_feat = f
                            t = 0.5 * (a + b)
                            best_thr = a if t >= b else t
            else:
                for c in range(n_classes):
                    cl[c] = 0.0
                    cr[c] = counts[node, c]
                sql = 0.0
                sqr = sq_total
                for k in range(nn - 1):
                    c = y_cls[idx[start + order[k]]]
                    sql += 2.0 * cl[c] + 1.0
                    cl[c] += 1.0
                    sqr -= 2.0 * cr[c] - 1.0
                    cr[c] -= 1.0
                    a = vals[order[k]]
                    b = vals[order[k + 1]]
                    if a < b:
                        nl = k + 1
                        nr = nn - nl
                        gain = sql / nl + sqr / nr - sq_total / nn
                        if gain > best_gain + (tol if best_feat >= 0 else 0.0):
                            best_gain = gain
                            best_feat = f
                            t = 0.5 * (a + b)
                            best_thr = a if t >= b else t

        if best_feat < 0:
            continue

        # partition idx[start:end] in place
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        mid = i

        feature[node] = best_feat
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # push right first so the left subtree is numbered first
        stack_node[sp] = rc
        stack_start[sp] = mid
        stack_end[sp] = end
        sp += 1
        stack_node[sp] = lc
        stack_start[sp] = start
        stack_end[sp] = mid
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), counts[:n_nodes].copy(),
            node_size[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply(feature, threshold, left, right, X):
    """Leaf index reached by each row of X."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out

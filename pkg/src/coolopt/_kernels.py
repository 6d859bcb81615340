"""Numba kernels for histogram boosting and batched tree traversal.

All reductions run in a fixed order so results do not depend on the number
of worker threads.
"""

import numpy as np
from numba import config, njit, prange

if config.THREADING_LAYER == "default":
    # the bundled TBB is too old for numba; skip probing it
    config.THREADING_LAYER = "omp"


@njit(cache=True)
def build_histogram(codes, residual, idx, start, end, hist_sum, hist_cnt):
    n_features = codes.shape[0]
    hist_sum[:, :] = 0.0
    hist_cnt[:, :] = 0
    for f in range(n_features):
        col = codes[f]
        for p in range(start, end):
            i = idx[p]
            b = col[i]
            hist_sum[f, b] += residual[i]
            hist_cnt[f, b] += 1


@njit(cache=True)
def _clip(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit(cache=True)
def find_best_split(hist_sum, hist_cnt, n_bins, node_sum, node_cnt, lo, hi, monotone, min_leaf, min_gain):
    """Best (feature, bin) split of one node.

    A split at bin ``b`` sends codes ``<= b`` left (code 0 = missing).
    Returns (gain, feature, bin, left_mean, right_mean); feature is -1 when
    no admissible split improves the loss by more than ``min_gain``.
    """
    parent = _clip(node_sum / node_cnt, lo, hi)
    parent_score = 2.0 * parent * node_sum - node_cnt * parent * parent
    best_gain = min_gain
    best_f = -1
    best_b = -1
    best_wl = 0.0
    best_wr = 0.0
    for f in range(hist_sum.shape[0]):
        cum_s = hist_sum[f, 0]
        cum_c = hist_cnt[f, 0]
        for b in range(1, n_bins[f] - 1):
            cum_s += hist_sum[f, b]
            cum_c += hist_cnt[f, b]
            n_left = cum_c
            n_right = node_cnt - n_left
            if n_left < min_leaf:
                continue
            if n_right < min_leaf:
                break
            s_left = cum_s
            s_right = node_sum - s_left
            wl = s_left / n_left
            wr = s_right / n_right
            if monotone[f] == 1 and wl > wr:
                continue
            cl = _clip(wl, lo, hi)
            cr = _clip(wr, lo, hi)
            gain = (2.0 * cl * s_left - n_left * cl * cl) + (2.0 * cr * s_right - n_right * cr * cr) - parent_score
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
                best_wl = wl
                best_wr = wr
    return best_gain, best_f, best_b, best_wl, best_wr


@njit(cache=True)
def partition(codes_f, idx, start, end, bin_):
    """Stable in-place partition of idx[start:end] by ``code <= bin_``; returns split point."""
    buf = np.empty(end - start, dtype=idx.dtype)
    n_left = 0
    for p in range(start, end):
        if codes_f[idx[p]] <= bin_:
            n_left += 1
    li = 0
    ri = n_left
    for p in range(start, end):
        i = idx[p]
        if codes_f[i] <= bin_:
            buf[li] = i
            li += 1
        else:
            buf[ri] = i
            ri += 1
    for k in range(end - start):
        idx[start + k] = buf[k]
    return start + n_left


@njit(cache=True)
def segment_sum(residual, idx, start, end):
    s = 0.0
    for p in range(start, end):
        s += residual[idx[p]]
    return s


@njit(cache=True)
def apply_leaf_values(pred, idx, starts, ends, values):
    for k in range(starts.shape[0]):
        v = values[k]
        for p in range(starts[k], ends[k]):
            pred[idx[p]] += v


@njit(cache=True)
def tree_apply(X, feature, threshold, left, right, value, root, out):
    """out[i] += value of the leaf row i reaches in the tree rooted at ``root``."""
    for i in range(X.shape[0]):
        node = root
        while feature[node] >= 0:
            x = X[i, feature[node]]
            if x <= threshold[node] or np.isnan(x):
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


@njit(cache=True)
def _predict_rows(X, start, end, feature, threshold, child, value, roots, base, out):
    for i in range(start, end):
        acc = base
        for t in range(roots.shape[0]):
            node = roots[t]
            while child[node] != node:
                # NaN compares False and so goes left
                if X[i, feature[node]] > threshold[node]:
                    node = child[node] + 1
                else:
                    node = child[node]
            acc += value[node]
        out[i] = acc


PREDICT_CHUNK = 1024


@njit(parallel=True, cache=True)
def ensemble_predict(X, feature, threshold, child, value, roots, base):
    """Batch prediction over a breadth-first flattened ensemble.

    Children of an internal node are adjacent (left at ``child``, right at
    ``child + 1``); a leaf is its own child.  Each row sums its leaf values
    in tree order, so the result is independent of how rows are split
    across threads.
    """
    n = X.shape[0]
    out = np.empty(n)
    n_chunks = (n + PREDICT_CHUNK - 1) // PREDICT_CHUNK
    for c in prange(n_chunks):
        _predict_rows(X, c * PREDICT_CHUNK, min(n, (c + 1) * PREDICT_CHUNK),
                      feature, threshold, child, value, roots, base, out)
    return out

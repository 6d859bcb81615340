"""Reference implementations used only by the tests.

Each one is written the slow, obvious way and shares no code with the
package routines it checks.
"""

import itertools

import numpy as np


def best_split_exhaustive(X, y, min_leaf=1):
    """Best squared-error split over every feature and every cut between sorted values.

    Returns (gain, feature, threshold) with ``x <= threshold`` going left.
    """
    n = len(y)
    total = float(np.sum(y))
    base = total * total / n
    best = (0.0, -1, None)
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f].tolist()))
        for thr in values[:-1]:
            left = X[:, f] <= thr
            n_l = int(left.sum())
            n_r = n - n_l
            if n_l < min_leaf or n_r < min_leaf:
                continue
            s_l = float(np.sum(y[left]))
            s_r = total - s_l
            gain = s_l * s_l / n_l + s_r * s_r / n_r - base
            if gain > best[0]:
                best = (gain, f, thr)
    return best


def _block_partitions(n):
    """Every split of range(n) into contiguous blocks, as lists of (start, end)."""
    out = []
    for cuts in itertools.product((False, True), repeat=n - 1):
        blocks, start = [], 0
        for i, cut in enumerate(cuts, start=1):
            if cut:
                blocks.append((start, i))
                start = i
        blocks.append((start, n))
        out.append(blocks)
    return out


def isotonic_bruteforce(targets):
    """Least-squares non-decreasing fits for a batch of equal-length arrays.

    The optimum is constant on contiguous blocks at the block means, so it
    is the best partition whose block means are non-decreasing.
    """
    T = np.asarray(targets, dtype=float)
    m, n = T.shape
    best_sse = np.full(m, np.inf)
    best_fit = np.zeros_like(T)
    for blocks in _block_partitions(n):
        fit = np.empty_like(T)
        for a, b in blocks:
            fit[:, a:b] = T[:, a:b].mean(axis=1, keepdims=True)
        ok = np.all(np.diff(fit, axis=1) >= -1e-12, axis=1) if n > 1 else np.ones(m, dtype=bool)
        sse = ((fit - T) ** 2).sum(axis=1)
        better = ok & (sse < best_sse - 1e-15)
        best_sse[better] = sse[better]
        best_fit[better] = fit[better]
    return best_fit


def tree_output(tree, x):
    """Leaf value reached by one row, walking the node arrays directly."""
    node = 0
    while tree.feature[node] >= 0:
        v = x[tree.feature[node]]
        node = tree.left[node] if (np.isnan(v) or v <= tree.threshold[node]) else tree.right[node]
    return tree.value[node]


def ensemble_output(ens, x):
    return ens.base_score + sum(ens.learning_rate * tree_output(t, x) for t in ens.trees)

"""Histogram gradient-boosted regression trees with monotone constraints.

Squared-error boosting, leaf-wise growth.  Monotonicity in +1-constrained
features is enforced by carrying an output interval ``[lo, hi]`` on every
node: a split on a constrained feature needs ordered child means, and its
children get ``[lo, mid]`` and ``[mid, hi]`` where ``mid`` is the midpoint of
the two child means.  Leaf values are clipped into their node's interval, so
every leaf left of a constrained split is <= every leaf right of it.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .errors import FeatureCountMismatch, InvalidConfig, ModelFormatError, NonFiniteTarget, TooFewSamples

log = logging.getLogger(__name__)

MIN_TRAIN_ROWS = 100


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    max_leaves: int = 31
    max_trees: int = 2000
    early_stopping_rounds: int = 50
    min_samples_leaf: int = 20
    histogram_bins: int = 256
    validation_fraction: float = 0.1
    seed: int = 42
    exact_splits: bool = False
    min_split_gain: float = 1e-12

    def __post_init__(self):
        for name in ("learning_rate", "max_leaves", "max_trees", "early_stopping_rounds",
                     "min_samples_leaf", "histogram_bins"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"TrainConfig.{name} must be positive")
        if self.max_leaves < 2:
            raise InvalidConfig("TrainConfig.max_leaves must be at least 2")
        if not 0 < self.validation_fraction < 1:
            raise InvalidConfig("TrainConfig.validation_fraction must lie in (0, 1)")
        if self.histogram_bins > 65534:
            raise InvalidConfig("TrainConfig.histogram_bins must fit a uint16 code")


class BinMapper:
    """Per-feature bin edges taken from the data; code 0 is reserved for NaN.

    ``code(x) = 1 + #{edges < x}``, so ``code <= b`` exactly when
    ``x <= edges[b - 1]``.
    """

    def __init__(self, max_bins=256, exact=False):
        self.max_bins = max_bins
        self.exact = exact
        self.edges = []

    def fit(self, X):
        self.edges = []
        for j in range(X.shape[1]):
            col = X[:, j]
            col = col[~np.isnan(col)]
            uniq = np.unique(col)
            if self.exact or len(uniq) <= self.max_bins:
                edges = uniq
            else:
                qs = np.linspace(0.0, 1.0, self.max_bins + 1)[1:]
                edges = np.unique(np.quantile(col, qs, method="inverted_cdf"))
            self.edges.append(edges.astype(float))
        return self

    @property
    def n_bins(self):
        return np.array([len(e) + 1 for e in self.edges], dtype=np.int64)

    def transform(self, X):
        codes = np.zeros((X.shape[1], X.shape[0]), dtype=np.uint16)
        for j, edges in enumerate(self.edges):
            col = X[:, j]
            c = np.searchsorted(edges, col, side="left") + 1
            c[np.isnan(col)] = 0
            codes[j] = c
        return codes


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf output before shrinkage
    lo: np.ndarray
    hi: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int((self.feature < 0).sum())

    def breadth_first(self):
        """Node ids in breadth-first order with each node's children adjacent."""
        order = [0]
        i = 0
        while i < len(order):
            k = order[i]
            i += 1
            if self.feature[k] >= 0:
                order += [int(self.left[k]), int(self.right[k])]
        return np.array(order, dtype=np.int64)

    def leaves_under(self, node):
        stack, out = [node], []
        while stack:
            k = stack.pop()
            if self.feature[k] < 0:
                out.append(k)
            else:
                stack.extend((self.left[k], self.right[k]))
        return out

    def to_dict(self):
        def bound(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "lo": bound(self.lo),
            "hi": bound(self.hi),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        def bound(a, fill):
            return np.array([fill if v is None else v for v in a], dtype=float)

        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            value=np.array(d["value"], dtype=float),
            lo=bound(d["lo"], -np.inf),
            hi=bound(d["hi"], np.inf),
            n_samples=np.array(d["n_samples"], dtype=np.int64),
        )


def _grow(codes, n_bins, edges, residual, monotone, cfg):
    n = residual.shape[0]
    n_features = codes.shape[0]
    width = int(n_bins.max())
    idx = np.arange(n, dtype=np.int64)
    mono = np.asarray(monotone, dtype=np.int64)

    feat, thr, left, right, lo, hi = [-1], [np.nan], [-1], [-1], [-np.inf], [np.inf]
    start, end, nsum = [0], [n], [K.segment_sum(residual, idx, 0, n)]
    hists = {}
    cand = {}

    def evaluate(node):
        cnt = end[node] - start[node]
        if cnt < 2 * cfg.min_samples_leaf:
            return
        hs, hc = hists[node]
        cand[node] = K.find_best_split(hs, hc, n_bins, nsum[node], cnt, lo[node], hi[node], mono,
                                       cfg.min_samples_leaf, cfg.min_split_gain)

    hs = np.zeros((n_features, width))
    hc = np.zeros((n_features, width), dtype=np.int64)
    K.build_histogram(codes, residual, idx, 0, n, hs, hc)
    hists[0] = (hs, hc)
    evaluate(0)

    n_leaves = 1
    while n_leaves < cfg.max_leaves:
        best, best_gain = -1, -np.inf
        for node, c in cand.items():
            if c[1] >= 0 and c[0] > best_gain:
                best, best_gain = node, c[0]
        if best < 0:
            break
        _, f, b, wl, wr = cand.pop(best)
        mid = wl + 0.5 * (wr - wl)
        mid = min(max(mid, lo[best]), hi[best])
        split_at = K.partition(codes[f], idx, start[best], end[best], b)

        kids = []
        for s, e in ((start[best], split_at), (split_at, end[best])):
            feat.append(-1)
            thr.append(np.nan)
            left.append(-1)
            right.append(-1)
            start.append(s)
            end.append(e)
            nsum.append(K.segment_sum(residual, idx, s, e))
            kids.append(len(feat) - 1)
        kl, kr = kids
        if mono[f] == 1:
            lo += [lo[best], mid]
            hi += [mid, hi[best]]
        else:
            lo += [lo[best], lo[best]]
            hi += [hi[best], hi[best]]
        feat[best], thr[best], left[best], right[best] = f, float(edges[f][b - 1]), kl, kr

        phs, phc = hists.pop(best)
        small, large = (kl, kr) if end[kl] - start[kl] <= end[kr] - start[kr] else (kr, kl)
        shs = np.zeros_like(phs)
        shc = np.zeros_like(phc)
        K.build_histogram(codes, residual, idx, start[small], end[small], shs, shc)
        hists[small] = (shs, shc)
        hists[large] = (phs - shs, phc - shc)
        evaluate(kl)
        evaluate(kr)
        n_leaves += 1

    n_nodes = len(feat)
    value = np.zeros(n_nodes)
    counts = np.array([e - s for s, e in zip(start, end)], dtype=np.int64)
    for k in range(n_nodes):
        if feat[k] < 0:
            value[k] = min(max(nsum[k] / counts[k], lo[k]), hi[k])
    tree = Tree(
        feature=np.array(feat, dtype=np.int64),
        threshold=np.array(thr, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=value,
        lo=np.array(lo, dtype=float),
        hi=np.array(hi, dtype=float),
        n_samples=counts,
    )
    leaves = np.array([k for k in range(n_nodes) if feat[k] < 0], dtype=np.int64)
    return tree, idx, np.array(start)[leaves], np.array(end)[leaves], leaves


def grow_tree(X, residual, cfg=None, monotone=None):
    """Fit a single regression tree to ``residual`` (no shrinkage)."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    residual = np.ascontiguousarray(residual, dtype=float)
    monotone = np.zeros(X.shape[1], dtype=np.int64) if monotone is None else np.asarray(monotone)
    mapper = BinMapper(cfg.histogram_bins, cfg.exact_splits).fit(X)
    tree, *_ = _grow(mapper.transform(X), mapper.n_bins, mapper.edges, residual, monotone, cfg)
    return tree


@dataclass
class BoostedEnsemble:
    base_score: float
    trees: list
    learning_rate: float
    monotone: tuple
    feature_count: int
    feature_min: np.ndarray = None
    feature_max: np.ndarray = None
    _flat: tuple = field(default=None, repr=False, compare=False)

    def _flatten(self):
        if self._flat is None:
            feats, thrs, childs, vals, roots = [], [], [], [], []
            offset = 0
            for t in self.trees:
                order = t.breadth_first()
                pos = np.empty(t.n_nodes, dtype=np.int64)
                pos[order] = np.arange(len(order))
                f = t.feature[order]
                internal = f >= 0
                child = np.arange(len(order), dtype=np.int64) + offset
                child[internal] = pos[t.left[order][internal]] + offset
                roots.append(offset)
                feats.append(np.where(internal, f, 0))
                thrs.append(np.where(internal, t.threshold[order], np.inf))
                childs.append(child)
                vals.append(np.where(internal, 0.0, self.learning_rate * t.value[order]))
                offset += len(order)
            if self.trees:
                flat = (np.concatenate(feats), np.concatenate(thrs), np.concatenate(childs),
                        np.concatenate(vals), np.array(roots, dtype=np.int64))
            else:
                flat = (np.zeros(1, dtype=np.int64), np.full(1, np.inf), np.zeros(1, dtype=np.int64),
                        np.zeros(1), np.zeros(0, dtype=np.int64))
            self._flat = flat
        return self._flat

    def predict(self, X):
        """Raw (uncalibrated) predictions for a row or a 2-D batch."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.ascontiguousarray(X.reshape(1, -1) if single else X)
        if X2.shape[1] != self.feature_count:
            raise FeatureCountMismatch(f"expected {self.feature_count} features, got {X2.shape[1]}")
        out = K.ensemble_predict(X2, *self._flatten(), float(self.base_score))
        return float(out[0]) if single else out

    def truncate(self, n_trees):
        self.trees = self.trees[:n_trees]
        self._flat = None

    def to_dict(self):
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "monotone": list(self.monotone),
            "feature_count": self.feature_count,
            "feature_min": None if self.feature_min is None else self.feature_min.tolist(),
            "feature_max": None if self.feature_max is None else self.feature_max.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                base_score=float(d["base_score"]),
                trees=[Tree.from_dict(t) for t in d["trees"]],
                learning_rate=float(d["learning_rate"]),
                monotone=tuple(int(m) for m in d["monotone"]),
                feature_count=int(d["feature_count"]),
                feature_min=None if d.get("feature_min") is None else np.array(d["feature_min"], dtype=float),
                feature_max=None if d.get("feature_max") is None else np.array(d["feature_max"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed ensemble: {exc}") from exc


def predict(model, row):
    return model.predict(row)


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def fit_ensemble(X, y, schema=None, cfg=None, monotone=None):
    """Boost squared-error trees with early stopping on the trailing slice.

    The last ``validation_fraction`` of rows (in the given order) is held out
    for early stopping; the ensemble is truncated to the tree count with the
    lowest validation RMSE.  Returns ``(ensemble, report)``.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    n, n_features = X.shape
    if n < MIN_TRAIN_ROWS:
        raise TooFewSamples(f"need at least {MIN_TRAIN_ROWS} rows, got {n}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteTarget("targets contain NaN or infinite values")
    if monotone is None:
        monotone = schema.monotone if schema is not None else (0,) * n_features
    monotone = tuple(int(m) for m in monotone)
    if len(monotone) != n_features:
        raise FeatureCountMismatch("monotone directions do not match the feature count")

    n_valid = max(1, int(round(cfg.validation_fraction * n)))
    n_fit = n - n_valid
    X_fit, y_fit = X[:n_fit], y[:n_fit]
    X_val, y_val = np.ascontiguousarray(X[n_fit:]), y[n_fit:]

    mapper = BinMapper(cfg.histogram_bins, cfg.exact_splits).fit(X_fit)
    codes = mapper.transform(X_fit)
    n_bins = mapper.n_bins

    base = float(np.mean(y_fit))
    pred_fit = np.full(n_fit, base)
    pred_val = np.full(len(y_val), base)
    train_rmse = [_rmse(pred_fit, y_fit)]
    valid_rmse = [_rmse(pred_val, y_val)]
    best_iter, best_val = 0, valid_rmse[0]
    trees = []
    stop_reason = "max_trees"

    for it in range(1, cfg.max_trees + 1):
        residual = y_fit - pred_fit
        tree, idx, starts, ends, leaves = _grow(codes, n_bins, mapper.edges, residual, monotone, cfg)
        if tree.n_leaves < 2:
            stop_reason = "no_split"
            break
        shrunk = cfg.learning_rate * tree.value
        K.apply_leaf_values(pred_fit, idx, starts, ends, shrunk[leaves])
        K.tree_apply(X_val, tree.feature, tree.threshold, tree.left, tree.right, shrunk, 0, pred_val)
        trees.append(tree)
        train_rmse.append(_rmse(pred_fit, y_fit))
        valid_rmse.append(_rmse(pred_val, y_val))
        if valid_rmse[-1] < best_val:
            best_val, best_iter = valid_rmse[-1], it
        elif it - best_iter >= cfg.early_stopping_rounds:
            stop_reason = "early_stopping"
            break

    finite = np.where(np.isnan(X_fit), np.nan, X_fit)
    with np.errstate(all="ignore"):
        fmin = np.nanmin(finite, axis=0)
        fmax = np.nanmax(finite, axis=0)
    ens = BoostedEnsemble(
        base_score=base,
        trees=trees[:best_iter],
        learning_rate=cfg.learning_rate,
        monotone=monotone,
        feature_count=n_features,
        feature_min=fmin,
        feature_max=fmax,
    )
    report = {
        "train_rmse": train_rmse,
        "valid_rmse": valid_rmse,
        "selected_trees": best_iter,
        "grown_trees": len(trees),
        "stop_reason": stop_reason,
        "n_fit": n_fit,
        "n_valid": len(y_val),
        "binning": "exact" if cfg.exact_splits else f"quantile<= {cfg.histogram_bins}",
        "missing_values": "routed left",
        "config": asdict(cfg),
    }
    log.info("boosting stopped (%s): %d trees grown, %d kept, valid RMSE %.5f",
             stop_reason, len(trees), best_iter, best_val)
    return ens, report


def check_monotonicity(model, schema=None, probes=1000, seed=0, X=None, monotone=None,
                       feature_min=None, feature_max=None):
    """Count probe pairs whose prediction decreases along a constrained feature.

    ``probes`` pairs are drawn per +1-constrained feature.  Base rows come from
    ``X`` when given, otherwise uniformly from the training feature ranges.
    ``model`` is anything with a batch ``predict``.
    """
    if probes <= 0:
        return 0
    if monotone is None:
        monotone = schema.monotone if schema is not None else model.monotone
    constrained = [j for j, m in enumerate(monotone) if m == 1]
    if not constrained:
        return 0
    inner = getattr(model, "ensemble", model)
    fmin = inner.feature_min if feature_min is None else np.asarray(feature_min, dtype=float)
    fmax = inner.feature_max if feature_max is None else np.asarray(feature_max, dtype=float)
    rng = np.random.default_rng(seed)
    n_features = len(monotone)
    violations = 0
    for j in constrained:
        if X is not None:
            base = np.asarray(X, dtype=float)[rng.integers(0, len(X), probes)].copy()
        else:
            lo_ = np.nan_to_num(fmin, nan=0.0)
            hi_ = np.nan_to_num(fmax, nan=1.0)
            base = lo_ + rng.random((probes, n_features)) * (hi_ - lo_)
        lo_j, hi_j = (fmin[j], fmax[j]) if fmin is not None else (np.nanmin(base[:, j]), np.nanmax(base[:, j]))
        span = max(hi_j - lo_j, 1e-9)
        a = lo_j - 0.05 * span + rng.random(probes) * 1.1 * span
        b = lo_j - 0.05 * span + rng.random(probes) * 1.1 * span
        low, high = np.minimum(a, b), np.maximum(a, b)
        high = np.where(high > low, high, low + 1e-6 * span)
        x0, x1 = base.copy(), base.copy()
        x0[:, j] = low
        x1[:, j] = high
        p0 = np.asarray(model.predict(x0))
        p1 = np.asarray(model.predict(x1))
        violations += int(np.sum(p1 < p0))
    return violations

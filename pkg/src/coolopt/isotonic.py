"""Isotonic post-calibration of raw ensemble outputs (pool adjacent violators)."""

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch


@dataclass
class IsotonicMap:
    knots_x: np.ndarray
    knots_y: np.ndarray

    def __post_init__(self):
        self.knots_x = np.asarray(self.knots_x, dtype=float)
        self.knots_y = np.asarray(self.knots_y, dtype=float)
        if self.knots_x.shape != self.knots_y.shape or self.knots_x.size < 1:
            raise ValueError("knots must be equal-length and non-empty")
        if np.any(np.diff(self.knots_x) <= 0):
            raise ValueError("knots_x must be strictly ascending")
        if np.any(np.diff(self.knots_y) < 0):
            raise ValueError("knots_y must be non-decreasing")

    def __call__(self, raw):
        return apply_isotonic(self, raw)

    def to_dict(self):
        return {"knots_x": self.knots_x.tolist(), "knots_y": self.knots_y.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["knots_x"], dtype=float), np.array(d["knots_y"], dtype=float))


def pava(y, w=None):
    """Weighted least-squares non-decreasing fit of ``y`` (in the given order)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    n = len(y)
    means = np.empty(n)
    weights = np.empty(n)
    sizes = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        means[top], weights[top], sizes[top] = y[i], w[i], 1
        while top > 0 and means[top - 1] > means[top]:
            wt = weights[top - 1] + weights[top]
            means[top - 1] = (weights[top - 1] * means[top - 1] + weights[top] * means[top]) / wt
            weights[top - 1] = wt
            sizes[top - 1] += sizes[top]
            top -= 1
    return np.repeat(means[: top + 1], sizes[: top + 1])


def fit_isotonic(raw, target):
    """Fit a non-decreasing map from raw predictions to targets.

    Duplicate raw values are pooled (mean target, weight = multiplicity)
    before PAVA; each distinct raw value becomes a knot.
    """
    raw = np.asarray(raw, dtype=float)
    target = np.asarray(target, dtype=float)
    if raw.shape != target.shape:
        raise LengthMismatch(f"raw has {raw.size} values, target has {target.size}")
    if raw.size < 2:
        raise LengthMismatch("need at least two points")
    xs, inverse, counts = np.unique(raw, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=target, minlength=len(xs))
    ys = pava(sums / counts, counts.astype(float))
    # guard against round-off in the pooled means
    ys = np.maximum.accumulate(ys)
    return IsotonicMap(xs, ys)


def apply_isotonic(iso, raw):
    """Piecewise-linear interpolation between knots, flat beyond the ends."""
    x = np.asarray(raw, dtype=float)
    kx, ky = iso.knots_x, iso.knots_y
    out = np.interp(x, kx, ky)
    if len(kx) > 1:
        # keep each value inside its segment's knot values so round-off cannot break monotonicity
        seg = np.clip(np.searchsorted(kx, x, side="right") - 1, 0, len(kx) - 1)
        upper = ky[np.minimum(seg + 1, len(kx) - 1)]
        out = np.minimum(np.maximum(out, ky[seg]), upper)
    return float(out) if out.ndim == 0 else out

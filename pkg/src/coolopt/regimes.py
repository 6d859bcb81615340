"""Three-cluster operating-regime labeler on (total flow, supply temperature).

K-means with k-means++ seeding on standardized inputs; cluster ids are
relabeled by ascending centroid total flow so regime numbering does not
depend on the seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData

N_REGIMES = 3


@dataclass
class RegimeModel:
    centroids: np.ndarray  # (3, 2) standardized, row r = regime r
    mean: np.ndarray
    std: np.ndarray
    label_order: tuple  # label_order[cluster index] = regime id
    inertia_history: list = field(default_factory=list, compare=False)
    n_iter: int = field(default=0, compare=False)

    def assign(self, q_tot, t_sup):
        """Nearest centroid in standardized space; ties go to the lowest id."""
        q_tot = np.asarray(q_tot, dtype=float)
        t_sup = np.asarray(t_sup, dtype=float)
        z = np.stack([(q_tot - self.mean[0]) / self.std[0], (t_sup - self.mean[1]) / self.std[1]], axis=-1)
        d = ((z[..., None, :] - self.centroids) ** 2).sum(axis=-1)
        return np.argmin(d, axis=-1)

    def centroids_raw(self):
        return self.centroids * self.std + self.mean

    def to_dict(self):
        return {
            "centroids": self.centroids.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "label_order": list(self.label_order),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            centroids=np.array(d["centroids"], dtype=float),
            mean=np.array(d["mean"], dtype=float),
            std=np.array(d["std"], dtype=float),
            label_order=tuple(d["label_order"]),
        )


def _kmeanspp(z, k, rng):
    n = len(z)
    centers = [z[rng.integers(n)]]
    d2 = ((z - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(z[idx])
        d2 = np.minimum(d2, ((z - z[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _assign(z, centers):
    d = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(z)), labels].sum()


def fit_regimes(points, seed=42, tol=1e-6, max_iter=100):
    """Fit the regime model on an (n, 2) array of (q_tot, t_sup) points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    if len(np.unique(pts, axis=0)) < N_REGIMES:
        raise DegenerateData(f"need at least {N_REGIMES} distinct points")
    mean = pts.mean(axis=0)
    std = pts.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (pts - mean) / std

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(z, N_REGIMES, rng)
    labels, inertia = _assign(z, centers)
    history = [inertia]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = centers.copy()
        for c in range(N_REGIMES):
            members = z[labels == c]
            if len(members):
                new[c] = members.mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        labels, inertia = _assign(z, centers)
        history.append(inertia)
        if shift < tol:
            break

    order = np.argsort(centers[:, 0], kind="stable")  # regime r <- cluster order[r]
    label_order = np.empty(N_REGIMES, dtype=int)
    label_order[order] = np.arange(N_REGIMES)
    return RegimeModel(
        centroids=centers[order],
        mean=mean,
        std=std,
        label_order=tuple(int(v) for v in label_order),
        inertia_history=history,
        n_iter=n_iter,
    )


def assign_regime(model, q_tot, t_sup):
    return int(model.assign(float(q_tot), float(t_sup)))

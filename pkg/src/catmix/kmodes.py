"""k-modes clustering for binary data (simple-matching distance).

Labels are 0-based in the Python API.  Tie policies:

* mode ties (equal 0/1 counts in a cluster) resolve to 1;
* distance ties during reassignment keep the current cluster when it is among
  the nearest, otherwise the lowest cluster index wins;
* an empty cluster takes the observation farthest from its own centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import CategoricalDataset


@dataclass(frozen=True)
class KModesConfig:
    k: int
    max_iter: int = 300
    n_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class KModesModel:
    centroids: np.ndarray
    assignment: np.ndarray
    cost: int
    iterations: int
    converged: bool
    cost_trace: tuple[int, ...] = field(default=())
    restart: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def _as_matrix(ds) -> np.ndarray:
    if isinstance(ds, CategoricalDataset):
        return ds.indicators.astype(np.int64)
    return np.asarray(ds, dtype=np.int64)


def simple_matching_distance(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def _distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(N, k) matrix of mismatch counts for 0/1 data."""
    return x @ (1 - centroids).T + (1 - x) @ centroids.T


def pairwise_distances(x) -> np.ndarray:
    x = _as_matrix(x)
    return _distances(x, x)


def _modes(x: np.ndarray, labels: np.ndarray, k: int, previous: np.ndarray) -> np.ndarray:
    counts = np.zeros((k, x.shape[1]))
    np.add.at(counts, labels, x)
    sizes = np.bincount(labels, minlength=k)[:, None]
    modes = (2 * counts >= sizes).astype(np.int64)
    empty = sizes[:, 0] == 0
    modes[empty] = previous[empty]
    return modes


def _assign(d: np.ndarray, current: np.ndarray | None) -> np.ndarray:
    labels = np.argmin(d, axis=1)
    if current is not None:
        keep = d[np.arange(d.shape[0]), current] == d.min(axis=1)
        labels = np.where(keep, current, labels)
    return labels


def _repair_empty(x, labels, centroids, k):
    """Move the worst-fit observation into each empty cluster."""
    for c in range(k):
        sizes = np.bincount(labels, minlength=k)
        if sizes[c] > 0:
            continue
        own = _distances(x, centroids)[np.arange(x.shape[0]), labels]
        own = np.where(sizes[labels] > 1, own, -1)
        i = int(np.argmax(own))
        if own[i] < 0:
            break
        labels[i] = c
        centroids[c] = x[i]
    return labels, centroids


def _init_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    uniq = np.unique(x, axis=0)
    if uniq.shape[0] >= k:
        return uniq[rng.choice(uniq.shape[0], size=k, replace=False)].copy()
    return x[rng.choice(x.shape[0], size=k, replace=False)].copy()


def _single_run(x: np.ndarray, k: int, max_iter: int, rng: np.random.Generator):
    centroids = _init_centroids(x, k, rng)
    labels = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = _assign(_distances(x, centroids), labels)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            it -= 1
            break
        labels, centroids = _repair_empty(x, new, centroids, k)
        centroids = _modes(x, labels, k, centroids)
        trace.append(int(_distances(x, centroids)[np.arange(x.shape[0]), labels].sum()))
    return centroids, labels, trace, it, converged


def fit_kmodes(ds, cfg: KModesConfig) -> KModesModel:
    """Best-cost k-modes solution over ``cfg.n_restarts`` random initializations.

    Restart r draws from its own stream spawned from ``cfg.seed``; cost ties
    go to the lowest restart index.
    """
    x = _as_matrix(ds)
    n = x.shape[0]
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds the number of observations N={n}")
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts)
    best = None
    for r, ss in enumerate(streams):
        centroids, labels, trace, it, conv = _single_run(x, cfg.k, cfg.max_iter, np.random.default_rng(ss))
        cost = trace[-1]
        if best is None or cost < best.cost:
            best = KModesModel(centroids, labels, cost, it, conv, tuple(trace), r)
    return best


def total_within_cluster_dissimilarity(model: KModesModel, ds) -> int:
    """Sum over clusters of mismatches between members and the cluster mode."""
    x = _as_matrix(ds)
    if x.shape[0] != model.assignment.shape[0] or x.shape[1] != model.centroids.shape[1]:
        raise ValueError("model and dataset shapes differ")
    total = 0
    for c in range(model.k):
        members = x[model.assignment == c]
        total += int((members != model.centroids[c]).sum())
    return total


def silhouette_scores(labels, ds=None, distances: np.ndarray | None = None) -> np.ndarray:
    """Per-observation silhouette S(i) = (b - a) / max(a, b).

    Members of singleton clusters score 0, as do points with a = b = 0.
    """
    labels = np.asarray(labels)
    d = pairwise_distances(ds) if distances is None else np.asarray(distances, dtype=float)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("silhouette needs at least 2 non-empty clusters")
    n = labels.shape[0]
    onehot = (labels[:, None] == present[None, :]).astype(float)
    sums = d @ onehot
    sizes = onehot.sum(axis=0)
    own = np.searchsorted(present, labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own_size > 1, s, 0.0)


def silhouette_width(model: KModesModel, ds) -> tuple[float, np.ndarray]:
    if model.k < 2:
        raise ValueError("silhouette needs k >= 2")
    s = silhouette_scores(model.assignment, ds)
    return float(s.mean()), s


def sweep_k(ds, k_range, cfg: KModesConfig) -> list[dict]:
    """Cost and mean silhouette for each k; every k reuses ``cfg.seed``."""
    ks = list(k_range)
    if not ks:
        raise ValueError("empty k range")
    x = _as_matrix(ds)
    n = x.shape[0]
    d = None
    rows = []
    for k in ks:
        if not 1 <= k <= n:
            raise ValueError(f"k={k} outside [1, {n}]")
        model = fit_kmodes(x, replace(cfg, k=k))
        sil = None
        if k >= 2 and np.unique(model.assignment).size >= 2:
            if d is None:
                d = pairwise_distances(x)
            sil = float(silhouette_scores(model.assignment, distances=d).mean())
        rows.append({"k": k, "cost": model.cost, "silhouette": sil, "sizes": model.sizes.tolist()})
    return rows


def cluster_profiles(model: KModesModel, ds) -> np.ndarray:
    """Within-cluster endorsement proportions, (k, J); NaN rows for empty clusters."""
    x = _as_matrix(ds).astype(float)
    out = np.full((model.k, x.shape[1]), np.nan)
    for c in range(model.k):
        members = x[model.assignment == c]
        if members.shape[0]:
            out[c] = members.mean(axis=0)
    return out

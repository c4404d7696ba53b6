"""Lloyd's k-means with k-means++ seeding, warm starts and empty-cluster repair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import sq_dists

_CHUNK = 8192


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iters: int = 100
    tol: float = 1e-4
    seed: int = 0
    init: str = "kmeans++"  # or "provided"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.init not in ("kmeans++", "provided"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class KMeansResult:
    centroids: np.ndarray    # (k, d) float64
    assignments: np.ndarray  # (n,) int64
    sse: float
    sse_trace: list = field(default_factory=list)
    n_iter: int = 0


def _point_sq_err(data, centroids, labels) -> np.ndarray:
    diff = data - centroids[labels]
    return np.einsum("ij,ij->i", diff, diff)


def _assign(data: np.ndarray, centroids: np.ndarray):
    n = data.shape[0]
    labels = np.empty(n, dtype=np.int64)
    c_norms = np.einsum("ij,ij->i", centroids, centroids)
    for s in range(0, n, _CHUNK):
        dist = sq_dists(data[s : s + _CHUNK], centroids, c_norms=c_norms)
        labels[s : s + _CHUNK] = np.argmin(dist, axis=1)
    err = _point_sq_err(data, centroids, labels)
    return labels, err


def assign(data, centroids):
    """Map each point to its nearest centroid (ties go to the lowest index).

    Returns:
        ``(assignments, sse)``.
    """
    data = np.asarray(data, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    if data.ndim != 2 or centroids.ndim != 2 or data.shape[1] != centroids.shape[1]:
        raise ValueError(f"dimension mismatch: data {data.shape}, centroids {centroids.shape}")
    labels, err = _assign(data, centroids)
    return labels, float(err.sum())


def kmeans_plusplus(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Standard D^2 seeding (single trial per center)."""
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = data[first]
    closest = sq_dists(data, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # Fewer distinct points than k; fall back to uniform picks.
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = data[idx]
        np.minimum(closest, sq_dists(data, centers[c : c + 1])[:, 0], out=closest)
    return centers


def _update(data, labels, err, centroids):
    k, d = centroids.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d), dtype=np.float64)
    np.add.at(sums, labels, data)
    new = centroids.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live, None]
    empty = np.flatnonzero(~live)
    if empty.size:
        # Re-seed dead centroids on the worst-fit points, farthest first.
        far = np.argsort(-err, kind="stable")[: empty.size]
        new[empty] = data[far]
    return new


def kmeans_fit(data, config: KMeansConfig, warm_start=None) -> KMeansResult:
    """Cluster ``data`` with Lloyd iterations.

    Iteration stops after ``config.max_iters`` updates or once the relative
    SSE improvement drops below ``config.tol``.  SSE is non-increasing across
    iterations; if round-off ever makes an update worse it is discarded and
    the loop ends.

    Args:
        data: ``(n, d)`` points.
        config: cluster count and stopping rule.
        warm_start: optional ``(k, d)`` initial centroids. Required when
            ``config.init == "provided"``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError(f"kmeans needs a nonempty 2-d array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("kmeans input contains non-finite values")
    n, d = data.shape
    k = config.k
    if k > n:
        raise ValueError(f"k={k} exceeds number of points n={n}")

    if warm_start is not None:
        centroids = np.array(warm_start, dtype=np.float64)
        if centroids.shape != (k, d):
            raise ValueError(f"warm start has shape {centroids.shape}, expected {(k, d)}")
        if not np.all(np.isfinite(centroids)):
            raise ValueError("warm start contains non-finite values")
    elif config.init == "provided":
        raise ValueError("init='provided' requires warm_start centroids")
    else:
        centroids = kmeans_plusplus(data, k, np.random.default_rng(config.seed))

    labels, err = _assign(data, centroids)
    sse = float(err.sum())
    trace = [sse]
    it = 0
    for it in range(1, config.max_iters + 1):
        new_centroids = _update(data, labels, err, centroids)
        new_labels, new_err = _assign(data, new_centroids)
        new_sse = float(new_err.sum())
        if new_sse > sse:
            break
        improvement = sse - new_sse
        centroids, labels, err, sse = new_centroids, new_labels, new_err, new_sse
        trace.append(sse)
        if improvement <= config.tol * trace[-2]:
            break
    return KMeansResult(centroids=centroids, assignments=labels, sse=sse, sse_trace=trace, n_iter=it)

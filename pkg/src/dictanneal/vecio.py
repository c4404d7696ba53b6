"""Vector dataset I/O (fvecs / bvecs / ivecs) and synthetic data generation.

Datasets are plain ``float32`` arrays of shape ``(n, d)``; ground truth is an
``int32`` array of shape ``(n_queries, n_neighbors)``.  All three ``*vecs``
layouts are repeated records of a little-endian int32 dimension followed by
the payload, with no header and no padding.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

_DIM = np.dtype("<i4")
_PAYLOAD = {
    "fvecs": np.dtype("<f4"),
    "ivecs": np.dtype("<i4"),
    "bvecs": np.dtype("u1"),
}


def _scan_records(raw: bytes, itemsize: int, path) -> tuple[int, int]:
    """Walk records one by one to locate the first malformed one.

    Only used when the vectorized fast path rejects the file, so the error
    can name the exact byte offset.
    """
    offset, d0, n = 0, None, 0
    total = len(raw)
    while offset < total:
        if offset + 4 > total:
            raise FormatError("truncated record header", path, offset)
        d = int(np.frombuffer(raw, dtype=_DIM, count=1, offset=offset)[0])
        if d <= 0:
            raise FormatError(f"invalid dimension {d}", path, offset)
        if d0 is None:
            d0 = d
        elif d != d0:
            raise FormatError(f"dimension mismatch: {d} != {d0}", path, offset)
        end = offset + 4 + d * itemsize
        if end > total:
            raise FormatError("truncated record", path, offset)
        offset = end
        n += 1
    return n, d0 or 0


def _read_vecs(path, kind: str) -> np.ndarray:
    payload = _PAYLOAD[kind]
    with open(path, "rb") as f:
        raw = f.read()
    if not raw:
        return np.empty((0, 0), dtype=payload)
    if len(raw) < 4:
        raise FormatError("truncated record header", path, 0)
    d = int(np.frombuffer(raw, dtype=_DIM, count=1)[0])
    if d <= 0:
        raise FormatError(f"invalid dimension {d}", path, 0)
    rec = 4 + d * payload.itemsize
    if len(raw) % rec:
        _scan_records(raw, payload.itemsize, path)
        raise FormatError("truncated record", path, len(raw) - len(raw) % rec)
    n = len(raw) // rec
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    dims = rows[:, :4].copy().view(_DIM).ravel()
    bad = np.flatnonzero(dims != d)
    if bad.size:
        # The fixed-stride view is wrong past a mismatch; rescan for the true offset.
        _scan_records(raw, payload.itemsize, path)
        raise FormatError("dimension mismatch", path, int(bad[0]) * rec)
    return rows[:, 4:].copy().view(payload).reshape(n, d)


def read_fvecs(path) -> np.ndarray:
    """Read an ``.fvecs`` file into an ``(n, d)`` float32 array.

    An empty file yields a ``(0, 0)`` array.
    """
    data = _read_vecs(path, "fvecs").astype(np.float32, copy=False)
    if not np.all(np.isfinite(data)):
        raise FormatError("non-finite component", path)
    return data


def read_bvecs(path) -> np.ndarray:
    """Read a ``.bvecs`` file; byte components are widened to float32 exactly."""
    return _read_vecs(path, "bvecs").astype(np.float32)


def read_ivecs(path) -> np.ndarray:
    """Read an ``.ivecs`` file (usually ground truth) as int32 rows."""
    return _read_vecs(path, "ivecs").astype(np.int32, copy=False)


def _write_vecs(arr: np.ndarray, path, payload: np.dtype) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
    n, d = arr.shape
    if n and d < 1:
        raise ValueError("vectors must have at least one component")
    out = np.empty((n, 4 + d * payload.itemsize), dtype=np.uint8)
    out[:, :4] = np.frombuffer(np.array([d], dtype=_DIM).tobytes(), dtype=np.uint8)
    out[:, 4:] = np.ascontiguousarray(arr.astype(payload, copy=False)).view(np.uint8).reshape(n, -1)
    with open(path, "wb") as f:
        f.write(out.tobytes())


def write_fvecs(data, path) -> None:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise ValueError("cannot write non-finite components")
    _write_vecs(data, path, _PAYLOAD["fvecs"])


def write_bvecs(data, path) -> None:
    data = np.asarray(data)
    if data.size and (data.min() < 0 or data.max() > 255 or np.any(data != np.round(data))):
        raise ValueError("bvecs components must be integers in [0, 255]")
    _write_vecs(data, path, _PAYLOAD["bvecs"])


def write_ivecs(data, path) -> None:
    _write_vecs(np.asarray(data), path, _PAYLOAD["ivecs"])


def read_vectors(path) -> np.ndarray:
    """Dispatch on file extension (``.fvecs`` or ``.bvecs``)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".bvecs":
        return read_bvecs(path)
    if ext == ".fvecs":
        return read_fvecs(path)
    raise FormatError(f"unsupported vector file extension {ext!r}", path)


def check_dataset(data, name: str = "dataset", allow_empty: bool = True) -> np.ndarray:
    """Validate and coerce to a C-contiguous float32 ``(n, d)`` array."""
    data = np.ascontiguousarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {data.shape}")
    if data.shape[0] == 0:
        if not allow_empty:
            raise ValueError(f"{name} is empty")
        return data
    if data.shape[1] < 1:
        raise ValueError(f"{name} must have d >= 1")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains non-finite values")
    return data


@dataclass(frozen=True)
class GaussianMixture:
    """Parameters of the synthetic generator.

    A sample is ``means[c] + stds[c] * dim_scale * z`` with ``z`` standard
    normal and component ``c`` drawn with probability ``weights[c]``.
    """

    weights: np.ndarray    # (C,)
    means: np.ndarray      # (C, d)
    stds: np.ndarray       # (C,)
    dim_scale: np.ndarray  # (d,)

    @classmethod
    def from_seed(cls, d: int, n_components: int, seed: int) -> "GaussianMixture":
        rng = np.random.default_rng([seed, 0])
        # Decaying per-dimension scale gives the data a non-flat PCA spectrum.
        dim_scale = 1.0 / np.sqrt(1.0 + np.arange(d) / 4.0)
        weights = rng.dirichlet(np.full(n_components, 5.0))
        means = 2.0 * rng.standard_normal((n_components, d)) * dim_scale
        stds = rng.uniform(0.5, 1.5, n_components)
        return cls(weights, means, stds, dim_scale)

    def population_mean(self) -> np.ndarray:
        return self.weights @ self.means

    def population_variance(self) -> np.ndarray:
        """Exact per-dimension variance of the mixture."""
        second = self.weights @ (self.means**2) + (self.weights @ self.stds**2) * self.dim_scale**2
        return second - self.population_mean() ** 2

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng([seed, 1])
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.means.shape[1]))
        x = self.means[comp] + (self.stds[comp, None] * self.dim_scale) * z
        return x.astype(np.float32)


def gen_synthetic(n: int, d: int, n_components: int, seed: int) -> np.ndarray:
    """Draw ``n`` points from a seeded Gaussian mixture in ``d`` dimensions."""
    for name, value in (("n", n), ("d", d), ("n_components", n_components)):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return GaussianMixture.from_seed(d, n_components, seed).sample(n, seed)


def split_train_query(data, n_train: int, n_query: int, seed: int):
    """Randomly partition rows into (train, database, queries).

    The database is every row not drawn for training or querying, so the three
    index sets are disjoint by construction.

    Returns:
        ``(train, database, queries, (train_idx, base_idx, query_idx))``.
    """
    data = np.asarray(data)
    n = data.shape[0]
    if n_train < 0 or n_query < 0 or n_train + n_query > n:
        raise ValueError(f"cannot take {n_train} train + {n_query} query rows from {n}")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    query_idx = np.sort(perm[n_train : n_train + n_query])
    base_idx = np.sort(perm[n_train + n_query :])
    return data[train_idx], data[base_idx], data[query_idx], (train_idx, base_idx, query_idx)


def check_ground_truth(gt, n_database: int) -> np.ndarray:
    """Validate ground-truth rows: in-range indices, no duplicates per query."""
    gt = np.asarray(gt)
    if gt.ndim != 2 or (gt.shape[0] and gt.shape[1] < 1):
        raise ValueError(f"ground truth must be (n_queries, >=1), got {gt.shape}")
    if gt.size and (gt.min() < 0 or gt.max() >= n_database):
        raise ValueError(f"ground-truth index outside [0, {n_database})")
    srt = np.sort(gt, axis=1)
    if np.any(srt[:, 1:] == srt[:, :-1]):
        raise ValueError("ground-truth row contains duplicate indices")
    return gt.astype(np.int32, copy=False)

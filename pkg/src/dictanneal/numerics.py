"""Dense linear-algebra helpers: PCA rotations, squared distances, Gram tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rotation:
    """Orthonormal PCA basis.

    ``rows[j]`` is the j-th principal direction; ``variances`` are the matching
    eigenvalues of the covariance in non-increasing order.  ``mean`` is the
    centering vector used to fit the basis.  ``project`` does not subtract it;
    callers that want centered coordinates subtract it themselves.
    """

    rows: np.ndarray       # (d, d) float64
    variances: np.ndarray  # (d,)
    mean: np.ndarray       # (d,)

    @property
    def d(self) -> int:
        return self.rows.shape[0]


def pca(data) -> Rotation:
    """Principal components of ``data`` via eigendecomposition of its covariance.

    The sign of each component is fixed so that its largest-magnitude entry is
    positive, which makes the result reproducible across LAPACK builds.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 1:
        raise ValueError(f"pca needs at least 2 rows and 1 column, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("pca input contains non-finite values")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / x.shape[0]
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    rows = evecs[:, order].T
    pivot = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), pivot])
    signs[signs == 0] = 1.0
    rows = rows * signs[:, None]
    return Rotation(rows=rows, variances=evals, mean=mean)


def project(rotation: Rotation, n_dims: int, vectors) -> np.ndarray:
    """Coordinates of ``vectors`` on the first ``n_dims`` principal directions."""
    if not 1 <= n_dims <= rotation.d:
        raise ValueError(f"n_dims must be in [1, {rotation.d}], got {n_dims}")
    v = np.asarray(vectors, dtype=np.float64)
    return v @ rotation.rows[:n_dims].T


def back_project(rotation: Rotation, coords) -> np.ndarray:
    """Map coordinates on the leading directions back to the original space.

    Missing trailing coordinates are treated as zero.
    """
    c = np.asarray(coords, dtype=np.float64)
    n_dims = c.shape[-1]
    if not 1 <= n_dims <= rotation.d:
        raise ValueError(f"coordinate width must be in [1, {rotation.d}], got {n_dims}")
    return c @ rotation.rows[:n_dims]


def sq_l2(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


def gram(A, B) -> np.ndarray:
    """Inner products ``G[i, j] = <A[i], B[j]>`` in float64."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A @ B.T


def sq_dists(X, C, x_norms=None, c_norms=None) -> np.ndarray:
    """All-pairs squared distances ``||X[i] - C[j]||^2`` (float64, clipped at 0)."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if X.shape[-1] != C.shape[-1]:
        raise ValueError(f"dimension mismatch: {X.shape[-1]} vs {C.shape[-1]}")
    if x_norms is None:
        x_norms = np.einsum("ij,ij->i", X, X)
    if c_norms is None:
        c_norms = np.einsum("ij,ij->i", C, C)
    d = x_norms[:, None] - 2.0 * (X @ C.T) + c_norms[None, :]
    np.maximum(d, 0.0, out=d)
    return d

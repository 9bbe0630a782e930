"""Dense matrix containers and the shared numerical kernels.

Samples are the *columns* of a data matrix ``X`` (``m`` features by ``n``
samples).  Everything is computed in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class DataMatrix:
    """Feature matrix with samples stored as columns.

    Parameters
    ----------
    values : ndarray, shape (m, n)
        ``m`` features by ``n`` samples.
    feature_names : sequence of str, optional
    """

    values: np.ndarray
    feature_names: Optional[Sequence[str]] = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValueError(f"data matrix must be 2-D, got shape {values.shape}")
        m, n = values.shape
        if m < 1 or n < 2:
            raise ValueError(f"need m >= 1 features and n >= 2 samples, got m={m}, n={n}")
        _check_finite(values, "data matrix")
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != m:
                raise ValueError(f"{len(names)} feature names for {m} features")
            object.__setattr__(self, "feature_names", names)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def feature_dim(self) -> int:
        return self.values.shape[0]

    @property
    def sample_count(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_samples(cls, rows, feature_names=None) -> "DataMatrix":
        """Build from row-major data (one sample per row)."""
        return cls(np.asarray(rows, dtype=np.float64).T, feature_names)


@dataclass(frozen=True)
class LabelVector:
    """Dense integer class ids in ``[0, c)``, every class present."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size:
            c = int(labels.max()) + 1
            if labels.min() < 0:
                raise ValueError("labels must be non-negative")
            missing = np.setdiff1d(np.arange(c), labels)
            if missing.size:
                raise ValueError(f"class ids {missing.tolist()} do not occur")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def __len__(self):
        return self.labels.size


def as_array(X) -> np.ndarray:
    """Return the float64 values behind ``X`` (DataMatrix or array-like)."""
    if isinstance(X, DataMatrix):
        return X.values
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    _check_finite(arr, "input matrix")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"{what} has non-finite entry {arr[i, j]!r} at ({i}, {j})")


def gram(X) -> np.ndarray:
    """Gram matrix ``K = X^T X`` of the sample columns."""
    A = as_array(X)
    K = A.T @ A
    # the product is symmetric in exact arithmetic only
    return (K + K.T) / 2


def pairwise_sq_dist(X) -> np.ndarray:
    """Squared Euclidean distances between sample columns.

    Computed from explicit differences rather than the Gram expansion, so
    coincident samples give exact zeros and the result is exactly symmetric.
    """
    A = as_array(X)
    return cdist(A.T, A.T, "sqeuclidean")


def row_sq_dist(V: np.ndarray) -> np.ndarray:
    """``H[i, j] = ||v_i - v_j||^2`` for the rows of ``V``."""
    return cdist(V, V, "sqeuclidean")


def trace_quadratic(V, L) -> float:
    """``Tr(V^T L V)``."""
    V = np.asarray(V, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[1] != V.shape[0]:
        raise ValueError(f"shape mismatch: L {L.shape}, V {V.shape}")
    return float(np.einsum("ik,ik->", V, L @ V))

"""Hard labels from the indicator matrix and external clustering scores."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning


@dataclass(frozen=True)
class ClusterAssignment:
    predicted: np.ndarray
    extraction_method: str = "kmeans_on_V"
    restarts: int = 10
    seed: int = 0


@dataclass(frozen=True)
class MetricTriple:
    nmi: float
    acc: float
    pur: float

    def as_dict(self):
        return {"nmi": self.nmi, "acc": self.acc, "pur": self.pur}


def _labels(x):
    return np.asarray(getattr(x, "predicted", getattr(x, "labels", x)))


def extract_labels(V, method: str = "kmeans", restarts: int = 10, seed: int = 0) -> ClusterAssignment:
    """Cluster labels from the rows of ``V`` (n x c).

    ``kmeans``: rows are L2-normalised (zero rows stay zero) and clustered
    into ``c`` groups by k-means++ with ``restarts`` seeded starts, keeping
    the lowest inertia.  ``argmax``: index of each row's largest entry.
    """
    V = np.asarray(V, dtype=np.float64)
    n, c = V.shape
    if not np.all(np.isfinite(V)):
        raise ValueError("indicator matrix has non-finite entries")
    if n < c:
        raise ValueError(f"fewer samples ({n}) than clusters ({c})")
    if method in ("argmax", "argmax_row"):
        return ClusterAssignment(np.argmax(V, axis=1).astype(np.int64), "argmax_row", 0, seed)
    if method not in ("kmeans", "kmeans_on_V"):
        raise ValueError(f"unknown extraction method {method!r}")
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    Vn = np.divide(V, norms, out=np.zeros_like(V), where=norms > 0)
    n_distinct = np.unique(Vn, axis=0).shape[0]
    k = min(c, n_distinct)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, init="k-means++", n_init=restarts,
                    random_state=seed % 2 ** 32).fit(Vn)
    pred = km.labels_.astype(np.int64)
    if k < c:
        pred = _split_largest(pred, k, c)
    return ClusterAssignment(pred, "kmeans_on_V", restarts, seed)


def _split_largest(pred, k, c):
    # fewer distinct rows than clusters: carve new ids off the largest cluster
    pred = pred.copy()
    for new in range(k, c):
        counts = np.bincount(pred, minlength=new)
        big = int(np.argmax(counts))
        members = np.flatnonzero(pred == big)
        if members.size < 2:
            break
        pred[members[members.size // 2:]] = new
    return pred


def contingency(true, pred) -> np.ndarray:
    t, p = _labels(true), _labels(pred)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} true vs {p.size} predicted labels")
    _, ti = np.unique(t, return_inverse=True)
    _, pi = np.unique(p, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def nmi(true, pred) -> float:
    """Mutual information over the geometric mean of the two entropies.

    If either entropy is zero the score is 1 for identical partitions and
    0 otherwise.
    """
    table = contingency(true, pred).astype(np.float64)
    # one-to-one correspondence: identical up to relabelling
    same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
    if same:
        return 1.0
    n = table.sum()
    pt, pp = table.sum(axis=1) / n, table.sum(axis=0) / n
    h_t = -np.sum(pt * np.log(pt))
    h_p = -np.sum(pp * np.log(pp))
    if h_t <= 0 or h_p <= 0:
        return 0.0
    nz = table > 0
    pij = table[nz] / n
    mi = np.sum(pij * np.log(pij / np.outer(pt, pp)[nz]))
    return float(min(max(mi / np.sqrt(h_t * h_p), 0.0), 1.0))


def acc(true, pred) -> float:
    """Best one-to-one matching accuracy (Hungarian assignment)."""
    table = contingency(true, pred)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum() / table.sum())


def purity(true, pred) -> float:
    table = contingency(true, pred)
    return float(table.max(axis=0).sum() / table.sum())


def score(true, pred) -> MetricTriple:
    return MetricTriple(nmi(true, pred), acc(true, pred), purity(true, pred))

"""p-nearest-neighbour affinity graph with the adaptive-neighbour closed form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix import pairwise_sq_dist


@dataclass(frozen=True)
class AffinityGraph:
    """Affinity ``A`` (rows sum to one), weights ``W = (A + A^T)/2``,
    degrees ``D`` and Laplacian ``L = diag(D) - W``."""

    A: np.ndarray
    W: np.ndarray
    D: np.ndarray
    L: np.ndarray
    neighbors: int

    @property
    def n(self) -> int:
        return self.A.shape[0]


class GraphError(ValueError):
    pass


def solve_affinity_row(d_row, self_index: int, p: int) -> np.ndarray:
    """Closed-form simplex-constrained weights for one sample.

    The self distance is excluded, the remaining distances are sorted
    ascending (ties broken by index) and

        a_j = (d_(p+1) - d_j)_+ / (p * d_(p+1) - sum_{u<=p} d_(u))

    If the first ``p + 1`` sorted distances are all equal the denominator
    vanishes and the ``p`` first neighbours get ``1/p`` each.
    """
    d = np.asarray(d_row, dtype=np.float64)
    n = d.shape[0]
    if not 1 <= p <= n - 2:
        raise GraphError(f"neighbour count p={p} outside [1, {n - 2}] for n={n}")
    if not 0 <= self_index < n:
        raise GraphError(f"self index {self_index} out of range")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise GraphError("distances must be finite and non-negative")

    others = np.delete(np.arange(n), self_index)
    order = others[np.argsort(d[others], kind="stable")]
    ds = d[order]
    d_next = ds[p]
    denom = p * d_next - ds[:p].sum()

    a = np.zeros(n)
    if denom <= 1e-15 * max(p * d_next, 1.0e-300):
        a[order[:p]] = 1.0 / p
        return a
    a[order] = np.maximum(d_next - ds, 0.0) / denom
    return a


def laplacian_of(W):
    """Degree vector and Laplacian ``L = diag(d) - W`` of a symmetric graph."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise GraphError(f"weight matrix must be square, got {W.shape}")
    scale = max(np.abs(W).max(initial=0.0), 1.0)
    if np.abs(W - W.T).max(initial=0.0) > 1e-10 * scale:
        raise GraphError("weight matrix is not symmetric")
    if (W < 0).any():
        raise GraphError("weight matrix has negative entries")
    D = W.sum(axis=1)
    L = np.diag(D) - W
    return D, L


def build_graph(X, p: int) -> AffinityGraph:
    """Assemble the affinity graph of the sample columns of ``X``."""
    dist = pairwise_sq_dist(X)
    n = dist.shape[0]
    if not 1 <= p <= n - 2:
        raise GraphError(f"neighbour count p={p} outside [1, {n - 2}] for n={n}")
    A = np.empty((n, n))
    for i in range(n):
        try:
            A[i] = solve_affinity_row(dist[i], i, p)
        except GraphError as exc:
            raise GraphError(f"row {i}: {exc}") from exc
    W = (A + A.T) / 2
    D, L = laplacian_of(W)
    return AffinityGraph(A=A, W=W, D=D, L=L, neighbors=p)


def export_edges(W, path) -> None:
    """Write the non-zero upper-triangle entries of ``W`` as ``i j weight`` lines."""
    W = np.asarray(W)
    rows, cols = np.nonzero(np.triu(W))
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {W[i, j]:.17g}\n")


def read_edges(path, n: int) -> np.ndarray:
    W = np.zeros((n, n))
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            i, j, w = line.split()
            W[int(i), int(j)] = W[int(j), int(i)] = float(w)
    return W

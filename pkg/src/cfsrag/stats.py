"""Win/loss counts, Friedman mean ranks and the Wilcoxon signed-rank test."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import gammaincc
from scipy.stats import norm, rankdata


@dataclass(frozen=True)
class ScoreTable:
    """Mean scores, one row per (dataset, metric) and one column per model."""

    rows: List[Tuple[str, str]]
    columns: List[str]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        rows, cols = list(self.rows), list(self.columns)
        if values.shape != (len(rows), len(cols)):
            raise ValueError(f"values shape {values.shape} does not match "
                             f"{len(rows)} rows x {len(cols)} columns")
        if len(set(cols)) != len(cols):
            raise ValueError("duplicate model ids")
        if not np.all(np.isfinite(values)):
            raise ValueError("score table has non-finite values")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "values", values)

    def column(self, model: str) -> np.ndarray:
        if model not in self.columns:
            raise KeyError(f"model {model!r} not in table (have {self.columns})")
        return self.values[:, self.columns.index(model)]


@dataclass(frozen=True)
class SignedRankResult:
    r_plus: float
    r_minus: float
    p_value: float
    n_effective: int
    degenerate: bool = False

    def as_dict(self):
        return {"r_plus": self.r_plus, "r_minus": self.r_minus, "p_value": self.p_value,
                "n_effective": self.n_effective, "degenerate": self.degenerate}


@dataclass(frozen=True)
class FriedmanResult:
    mean_ranks: Dict[str, float]
    chi2: float
    p_value: float
    n_rows: int


def win_loss(table: ScoreTable, reference: str) -> Dict[str, Tuple[int, int]]:
    """``(wins, losses)`` of ``reference`` against every other model.

    A row counts as a win when the reference scores strictly higher, a loss
    when strictly lower; ties count as neither.
    """
    ref = table.column(reference)
    out = {}
    for j, model in enumerate(table.columns):
        if model == reference:
            continue
        other = table.values[:, j]
        out[model] = (int(np.sum(ref > other)), int(np.sum(ref < other)))
    return out


def total_win_loss(counts: Dict[str, Tuple[int, int]]) -> Tuple[int, int]:
    return (sum(w for w, _ in counts.values()), sum(lo for _, lo in counts.values()))


def friedman_ranks(table: ScoreTable) -> FriedmanResult:
    """Mean rank per model (1 = best, ties averaged) and the Friedman statistic."""
    N, k = table.values.shape
    if k < 2 or N < 2:
        raise ValueError(f"need at least 2 models and 2 rows, got {k} and {N}")
    ranks = np.vstack([rankdata(-row, method="average") for row in table.values])
    R = ranks.mean(axis=0)
    chi2 = 12.0 * N / (k * (k + 1)) * (np.sum(R ** 2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(float(chi2), 0.0)
    # chi-square survival function with k-1 dof
    p = float(gammaincc((k - 1) / 2.0, chi2 / 2.0))
    return FriedmanResult(dict(zip(table.columns, R.tolist())), chi2, p, N)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> SignedRankResult:
    """Two-sided signed-rank test of ``a - b`` by the normal approximation.

    Zero differences are dropped; no continuity or tie correction.  Fewer
    than five non-zero differences give a result flagged ``degenerate``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be 1-D and equally long, got {a.shape} and {b.shape}")
    if a.size < 5:
        raise ValueError(f"need at least 5 pairs, got {a.size}")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero; the test is undefined")
    r = rankdata(np.abs(d), method="average")
    r_plus = float(r[d > 0].sum())
    r_minus = float(r[d < 0].sum())
    mu = n * (n + 1) / 4.0
    sigma = np.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
    z = (min(r_plus, r_minus) - mu) / sigma
    p = float(min(1.0, 2.0 * norm.cdf(z)))
    return SignedRankResult(r_plus, r_minus, p, n, degenerate=n < 5)

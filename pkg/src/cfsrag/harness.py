"""Multi-seed benchmarks, hyperparameter grids, ablations and neighbour sweeps.

Every fit is an independent job indexed by ``(variant, grid point, run)``;
its seed is split off the master seed from those indices, so results do
not depend on scheduling or on the number of worker processes.
"""
from __future__ import annotations

import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import load_dataset
from .factorize import ABLATION_VARIANTS, VARIANT_ORDER, FitDivergence, Hyperparams, Variant, fit
from .graph import build_graph
from .matrix import DataMatrix
from .metrics import extract_labels, score
from .stats import ScoreTable, friedman_ranks, total_win_loss, wilcoxon_signed_rank, win_loss

logger = logging.getLogger(__name__)

METRICS = ("nmi", "acc", "pur")
DEFAULT_GRID = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3]
DEFAULT_P_GRID = [3, 5, 7, 9, 11, 13, 15]
WORKERS_ENV = "CFSRAG_WORKERS"


def derive_seed(master: int, *indices: int) -> int:
    """64-bit seed for the job at ``indices`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


@dataclass
class ExperimentConfig:
    """Everything that determines a benchmark's output."""

    dataset: str = "zoo"
    variants: List[str] = field(default_factory=lambda: ["CFSRAG"])
    alpha: List[float] = field(default_factory=lambda: [1.0])
    beta: List[float] = field(default_factory=lambda: [0.1])
    lam: List[float] = field(default_factory=lambda: [0.1])
    neighbors: List[int] = field(default_factory=lambda: [5])
    clusters: Optional[int] = None
    runs: int = 10
    seed: int = 0
    max_iter: int = 200
    rel_tol: float = 1e-6
    extract: str = "kmeans"
    restarts: int = 10
    scale_features: bool = False
    reference: str = "CFSRAG"

    def __post_init__(self):
        self.variants = [Variant.parse(v).value for v in self.variants]
        if not self.variants:
            raise ValueError("variant list is empty")
        for name in ("alpha", "beta", "lam", "neighbors"):
            vals = list(getattr(self, name))
            if not vals:
                raise ValueError(f"{name} grid is empty")
            if any(not v > 0 for v in vals):
                raise ValueError(f"{name} grid values must be positive, got {vals}")
            setattr(self, name, vals)
        self.neighbors = [int(p) for p in self.neighbors]
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.extract not in ("kmeans", "argmax"):
            raise ValueError(f"extract must be kmeans or argmax, got {self.extract!r}")
        self.reference = Variant.parse(self.reference).value

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    dataset: dict
    records: List[dict]
    aggregates: List[dict]
    best: Dict[str, int]
    comparison: Optional[dict] = None
    curves: Optional[List[dict]] = None
    failed_runs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(**d)

    def best_aggregate(self, variant: str) -> dict:
        gi = self.best[variant]
        for agg in self.aggregates:
            if agg["variant"] == variant and agg["grid_index"] == gi:
                return agg
        raise KeyError(variant)

    def runs_of(self, variant: str, grid_index: Optional[int] = None) -> List[dict]:
        gi = self.best[variant] if grid_index is None else grid_index
        return [r for r in self.records if r["variant"] == variant and r["grid_index"] == gi]


def min_max_scale(X: np.ndarray) -> np.ndarray:
    """Scale each feature (row of ``X``) to [0, 1]; constant features become 0."""
    lo = X.min(axis=1, keepdims=True)
    span = X.max(axis=1, keepdims=True) - lo
    return np.divide(X - lo, span, out=np.zeros_like(X), where=span > 0)


def variant_grid(variant: Variant, cfg: ExperimentConfig) -> List[dict]:
    """Distinct effective parameter settings of ``variant`` over the config grids.

    Parameters a variant ignores are collapsed, so CFSR sweeps only ``alpha``
    and the non-graph variants ignore the neighbour count.
    """
    if variant in (Variant.NMF, Variant.CF):
        return [{"alpha": 0.0, "beta": 0.0, "lambda": 0.0, "neighbors": 0}]
    alphas = cfg.alpha
    betas = cfg.beta if variant.uses_graph else [0.0]
    lams = [0.0] if variant is Variant.CFSR else cfg.lam
    ps = cfg.neighbors if variant.uses_graph else [0]
    return [{"alpha": a, "beta": b, "lambda": lm, "neighbors": p}
            for p, a, b, lm in itertools.product(ps, alphas, betas, lams)]


def _hyperparams(variant: Variant, point: dict, cfg: ExperimentConfig, clusters: int, seed: int):
    return Hyperparams(clusters=clusters, alpha=point["alpha"] or 1.0, beta=point["beta"],
                       lam=point["lambda"], neighbors=point["neighbors"] or 5,
                       max_iter=cfg.max_iter, rel_tol=cfg.rel_tol, seed=seed, variant=variant)


# per-process job context, installed by _init_worker
_CTX: dict = {}


def _init_worker(X, labels, graphs, extract, restarts):
    _CTX.update(X=X, labels=labels, graphs=graphs, extract=extract, restarts=restarts)


def _run_job(job):
    key, hp = job
    rec = {"variant": hp.variant.value, "grid_index": key[1], "run": key[2], "seed": hp.seed}
    graph = _CTX["graphs"].get(hp.neighbors) if hp.variant.uses_graph else None
    try:
        res = fit(_CTX["X"], hp, graph=graph)
        V = res.state.V
        if not np.all(np.isfinite(V)):
            raise FitDivergence("indicator matrix is not finite", res.state, res.iterations_run)
    except FitDivergence as exc:
        rec.update(status="failed", error=str(exc), iterations=exc.iteration,
                   converged=False, final_objective=None,
                   **{m: None for m in METRICS})
        return key, rec
    assign = extract_labels(V, _CTX["extract"], _CTX["restarts"], seed=hp.seed)
    s = score(_CTX["labels"], assign)
    rec.update(status="ok", error=None, iterations=res.iterations_run, converged=res.converged,
               final_objective=res.final_objective, nmi=s.nmi, acc=s.acc, pur=s.pur)
    return key, rec


def _load(cfg: ExperimentConfig):
    X, y, desc = load_dataset(cfg.dataset)
    if y is None:
        raise ValueError(f"dataset {cfg.dataset!r} has no labels; scores need ground truth")
    Xv = X.values
    if cfg.scale_features:
        Xv = min_max_scale(Xv)
    return Xv, y.labels, desc


def run_benchmark(cfg: ExperimentConfig, workers: Optional[int] = None, kind: str = "benchmark",
                  data=None) -> ExperimentReport:
    """Fit every (variant, grid point, run), score, aggregate and compare.

    ``data`` optionally supplies ``(X, labels, descriptor)`` instead of
    loading ``cfg.dataset``.
    """
    Xv, labels, desc = data if data is not None else _load(cfg)
    if isinstance(Xv, DataMatrix):
        Xv = Xv.values
    labels = np.asarray(getattr(labels, "labels", labels))
    n = Xv.shape[1]
    clusters = cfg.clusters or int(labels.max()) + 1
    variants = [Variant(v) for v in cfg.variants]

    jobs, grids = [], {}
    for v in variants:
        vi = VARIANT_ORDER.index(v)
        grids[v.value] = variant_grid(v, cfg)
        for gi, point in enumerate(grids[v.value]):
            for run in range(cfg.runs):
                seed = derive_seed(cfg.seed, vi, gi, run)
                jobs.append(((vi, gi, run), _hyperparams(v, point, cfg, clusters, seed)))

    ps = sorted({hp.neighbors for _, hp in jobs if hp.variant.uses_graph})
    for p in ps:
        if not 1 <= p <= n - 2:
            raise ValueError(f"neighbour count p={p} outside [1, {n - 2}] for n={n}")
    graphs = {p: build_graph(Xv, p) for p in ps}

    workers = workers or default_workers()
    ctx = (Xv, labels, graphs, cfg.extract, cfg.restarts)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=ctx) as ex:
            results = list(ex.map(_run_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        _init_worker(*ctx)
        results = [_run_job(j) for j in jobs]
    results.sort(key=lambda kr: kr[0])
    records = [rec for _, rec in results]
    for rec in records:
        rec.update(grids[rec["variant"]][rec["grid_index"]])

    failed = sum(r["status"] != "ok" for r in records)
    if failed:
        logger.warning("%d of %d runs failed and are excluded from aggregates", failed, len(records))

    aggregates = aggregate(records, grids)
    best = select_best(aggregates)
    report = ExperimentReport(kind=kind, config=cfg.as_dict(),
                              dataset={"id": desc.id, "size": desc.size,
                                       "dimensionality": desc.dimensionality,
                                       "classes": desc.classes},
                              records=records, aggregates=aggregates, best=best,
                              failed_runs=failed)
    if len(best) >= 2:
        report.comparison = compare(report, cfg.reference)
    return report


def aggregate(records: List[dict], grids: Dict[str, List[dict]]) -> List[dict]:
    """Mean and (population) standard deviation per (variant, grid point)."""
    groups: Dict[tuple, List[dict]] = {}
    for r in records:
        groups.setdefault((r["variant"], r["grid_index"]), []).append(r)
    out = []
    for (variant, gi), recs in groups.items():
        ok = [r for r in recs if r["status"] == "ok"]
        agg = {"variant": variant, "grid_index": gi, **grids[variant][gi],
               "runs": len(ok), "failed": len(recs) - len(ok), "mean": {}, "std": {}}
        for m in METRICS:
            vals = np.array([r[m] for r in ok], dtype=np.float64)
            agg["mean"][m] = float(vals.mean()) if vals.size else None
            agg["std"][m] = float(vals.std()) if vals.size else None
        out.append(agg)
    return out


def select_best(aggregates: List[dict]) -> Dict[str, int]:
    """Grid point with the highest mean NMI per variant (lowest index on ties)."""
    best: Dict[str, tuple] = {}
    for agg in aggregates:
        val = agg["mean"]["nmi"]
        if val is None:
            continue
        key = (val, -agg["grid_index"])
        if agg["variant"] not in best or key > best[agg["variant"]][0]:
            best[agg["variant"]] = (key, agg["grid_index"])
    return {v: gi for v, (_, gi) in best.items()}


def score_table(report: ExperimentReport, variants: Optional[Sequence[str]] = None) -> ScoreTable:
    """Best-grid-point means in percent, rows (dataset, metric)."""
    variants = [v for v in (variants or report.config["variants"]) if v in report.best]
    values = [[100 * report.best_aggregate(v)["mean"][m] for v in variants] for m in METRICS]
    return ScoreTable([(report.dataset["id"], m) for m in METRICS],
                      [Variant(v).label for v in variants], np.array(values))


def _paired_scores(report: ExperimentReport, variant: str) -> Dict[tuple, float]:
    return {(m, r["run"]): r[m] for r in report.runs_of(variant) if r["status"] == "ok"
            for m in METRICS}


def signed_rank_block(report: ExperimentReport, a: str, b: str) -> dict:
    """Signed-rank test of ``a`` against ``b`` over matching (metric, run) scores."""
    sa, sb = _paired_scores(report, a), _paired_scores(report, b)
    keys = sorted(set(sa) & set(sb))
    out = {"a": Variant(a).label, "b": Variant(b).label, "pairs": len(keys)}
    try:
        res = wilcoxon_signed_rank([sa[k] for k in keys], [sb[k] for k in keys])
    except ValueError as exc:
        out.update(r_plus=None, r_minus=None, p_value=None, n_effective=0,
                   degenerate=True, note=str(exc))
        return out
    out.update(res.as_dict(), note=None)
    return out


def compare(report: ExperimentReport, reference: str) -> dict:
    """Win/loss, Friedman ranks and signed-rank tests against ``reference``."""
    table = score_table(report)
    out = {"reference": Variant(reference).label,
           "table": {"rows": [list(r) for r in table.rows], "columns": table.columns,
                     "values": table.values.tolist()}}
    ref_label = Variant(reference).label
    if ref_label in table.columns:
        wl = win_loss(table, ref_label)
        out["win_loss"] = {k: list(v) for k, v in wl.items()}
        out["win_loss_total"] = list(total_win_loss(wl))
        out["signed_rank"] = [signed_rank_block(report, reference, v)
                              for v in report.config["variants"]
                              if v != reference and v in report.best]
    fr = friedman_ranks(table)
    out["friedman"] = {"mean_ranks": fr.mean_ranks, "chi2": fr.chi2, "p_value": fr.p_value}
    return out


def run_ablation(cfg: ExperimentConfig, workers: Optional[int] = None, data=None) -> ExperimentReport:
    """The four self-representation variants under one protocol.

    Adds the pairwise signed-rank test for each of the six variant pairs.
    """
    cfg = ExperimentConfig(**{**cfg.as_dict(), "variants": [v.value for v in ABLATION_VARIANTS],
                              "reference": "CFSRAG"})
    report = run_benchmark(cfg, workers=workers, kind="ablation", data=data)
    names = [v.value for v in ABLATION_VARIANTS]
    pairs = [(names[i], names[j]) for i in range(len(names)) for j in range(i)]
    report.comparison["pairwise"] = [signed_rank_block(report, a, b) for a, b in pairs]
    return report


def run_sweep_p(cfg: ExperimentConfig, p_grid: Optional[Sequence[int]] = None,
                workers: Optional[int] = None, data=None) -> ExperimentReport:
    """One benchmark per neighbour count; curve points hold best-grid means.

    Counts above ``n - 2`` are skipped with a warning.
    """
    data = data if data is not None else _load(cfg)
    n = data[0].shape[1] if not isinstance(data[0], DataMatrix) else data[0].sample_count
    p_grid = list(p_grid or DEFAULT_P_GRID)
    curves, records, aggregates = [], [], []
    for p in p_grid:
        if not 1 <= p <= n - 2:
            logger.warning("skipping p=%d: outside [1, %d] for n=%d", p, n - 2, n)
            continue
        sub = ExperimentConfig(**{**cfg.as_dict(), "neighbors": [p]})
        rep = run_benchmark(sub, workers=workers, data=data)
        for v in sub.variants:
            if v not in rep.best:
                continue
            agg = rep.best_aggregate(v)
            curves.append({"neighbors": p, "variant": v, "grid_index": agg["grid_index"],
                           **{m: agg["mean"][m] for m in METRICS},
                           **{f"{m}_std": agg["std"][m] for m in METRICS}})
        records += [{**r, "sweep_p": p} for r in rep.records]
        aggregates += [{**a, "sweep_p": p} for a in rep.aggregates]
    desc = data[2]
    return ExperimentReport(kind="sweep-p", config={**cfg.as_dict(), "p_grid": p_grid},
                            dataset={"id": desc.id, "size": desc.size,
                                     "dimensionality": desc.dimensionality, "classes": desc.classes},
                            records=records, aggregates=aggregates, best={}, curves=curves,
                            failed_runs=sum(r["status"] != "ok" for r in records))

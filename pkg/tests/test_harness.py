import json
import logging

import numpy as np
import pytest

from cfsrag.harness import (DEFAULT_P_GRID, ExperimentConfig, ExperimentReport, METRICS,
                            default_workers, derive_seed, min_max_scale, run_ablation,
                            run_benchmark, run_sweep_p, variant_grid)
from cfsrag.factorize import VARIANT_ORDER, Variant
from cfsrag.report import dumps

BLOBS = "blobs:c=3,per=8,m=4,seed=1"


def small(**kw):
    base = dict(dataset=BLOBS, runs=2, max_iter=30)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(runs=0)
    with pytest.raises(ValueError):
        ExperimentConfig(alpha=[])
    with pytest.raises(ValueError):
        ExperimentConfig(beta=[0.0])
    with pytest.raises(ValueError):
        ExperimentConfig(variants=["PCA"])
    with pytest.raises(ValueError):
        ExperimentConfig(extract="dbscan")
    assert ExperimentConfig(variants=["cfsr-f"]).variants == ["CFSR_F"]


def test_seed_splitting_is_collision_free():
    seeds = {derive_seed(123, v, g, r) for v in range(len(VARIANT_ORDER))
             for g in range(400) for r in range(20)}
    assert len(seeds) == len(VARIANT_ORDER) * 400 * 20
    assert derive_seed(1, 0, 0, 0) != derive_seed(2, 0, 0, 0)
    assert derive_seed(7, 1, 2, 3) == derive_seed(7, 1, 2, 3)


def test_variant_grid_collapses_unused_parameters():
    cfg = ExperimentConfig(alpha=[1, 2], beta=[1, 2, 3], lam=[1, 2], neighbors=[3, 5])
    assert len(variant_grid(Variant.CFSR, cfg)) == 2
    assert len(variant_grid(Variant.CFSR_F, cfg)) == 4
    assert len(variant_grid(Variant.CFSRG, cfg)) == 24
    assert len(variant_grid(Variant.CF, cfg)) == 1
    assert all(pt["beta"] == 0 and pt["lambda"] == 0 for pt in variant_grid(Variant.CFSR, cfg))


def test_minimal_config_one_record():
    rep = run_benchmark(small(runs=1))
    assert len(rep.records) == 1
    assert rep.comparison is None
    rec = rep.records[0]
    assert rec["status"] == "ok" and set(METRICS) <= set(rec)


def test_aggregates_reproducible_from_records():
    rep = run_benchmark(small(variants=["CFSR", "CFSRAG"], alpha=[0.1, 1.0], runs=3))
    for agg in rep.aggregates:
        recs = [r for r in rep.records
                if r["variant"] == agg["variant"] and r["grid_index"] == agg["grid_index"]]
        assert agg["runs"] == len(recs) == 3
        for m in METRICS:
            vals = np.array([r[m] for r in recs])
            assert abs(vals.mean() - agg["mean"][m]) <= 1e-12
            assert abs(vals.std() - agg["std"][m]) <= 1e-12


def test_best_point_maximises_nmi():
    rep = run_benchmark(small(alpha=[1e-3, 1.0, 1e3], runs=2))
    best = rep.best_aggregate("CFSRAG")
    assert best["mean"]["nmi"] == max(a["mean"]["nmi"] for a in rep.aggregates)


def test_comparison_block_consistency():
    rep = run_benchmark(small(variants=["CFSR", "CFSR_F", "CFSRG", "CFSRAG"], runs=3))
    comp = rep.comparison
    assert comp["reference"] == "CFSRAG"
    assert set(comp["win_loss"]) == {"CFSR", "CFSR-F", "CFSRG"}
    for sr in comp["signed_rank"]:
        if sr["r_plus"] is not None:
            n = sr["n_effective"]
            assert sr["r_plus"] + sr["r_minus"] == pytest.approx(n * (n + 1) / 2, abs=1e-9)
    ranks = comp["friedman"]["mean_ranks"]
    assert sum(ranks.values()) == pytest.approx(4 * 5 / 2)


def test_ablation_structure():
    cfg = small(variants=["CFSRAG"], beta=[0.5], lam=[0.2], runs=2)
    rep = run_ablation(cfg)
    assert rep.kind == "ablation"
    assert rep.config["variants"] == ["CFSR", "CFSR_F", "CFSRG", "CFSRAG"]
    assert len(rep.comparison["pairwise"]) == 6
    cfsr = rep.best_aggregate("CFSR")
    assert cfsr["beta"] == 0 and cfsr["lambda"] == 0
    g, ag = rep.best_aggregate("CFSRG"), rep.best_aggregate("CFSRAG")
    assert {k: g[k] for k in ("alpha", "beta", "lambda", "neighbors")} == \
        {k: ag[k] for k in ("alpha", "beta", "lambda", "neighbors")}


def test_sweep_p_curves(caplog):
    cfg = small(runs=1, max_iter=10)
    with caplog.at_level(logging.WARNING):
        rep = run_sweep_p(cfg, p_grid=[3, 5, 40])
    assert [c["neighbors"] for c in rep.curves] == [3, 5]
    assert "skipping p=40" in caplog.text
    again = run_sweep_p(cfg, p_grid=[3, 5, 40])
    assert dumps(again) == dumps(rep)


def test_sweep_default_grid_on_zoo():
    cfg = ExperimentConfig(dataset="zoo", runs=1, max_iter=5, restarts=1)
    rep = run_sweep_p(cfg)
    assert [c["neighbors"] for c in rep.curves] == DEFAULT_P_GRID


def test_single_point_sweep():
    rep = run_sweep_p(small(runs=1, max_iter=5), p_grid=[4])
    assert len(rep.curves) == 1


def test_failed_runs_are_excluded(monkeypatch, caplog):
    import cfsrag.harness as h
    from cfsrag.factorize import FitDivergence

    real_fit = h.fit

    def flaky(X, hp, graph=None):
        if hp.seed == derive_seed(0, VARIANT_ORDER.index(Variant.CFSRAG), 0, 1):
            raise FitDivergence("objective became nan", None, 3)
        return real_fit(X, hp, graph=graph)

    monkeypatch.setattr(h, "fit", flaky)
    with caplog.at_level(logging.WARNING):
        rep = run_benchmark(small(runs=3))
    assert rep.failed_runs == 1
    assert rep.aggregates[0]["runs"] == 2 and rep.aggregates[0]["failed"] == 1
    assert "1 of 3 runs failed" in caplog.text


def test_deterministic_across_workers():
    cfg = small(variants=["CFSR", "CFSRAG"], alpha=[0.1, 1.0], runs=2)
    a = dumps(run_benchmark(cfg, workers=1))
    b = dumps(run_benchmark(cfg, workers=2))
    c = dumps(run_benchmark(cfg, workers=1))
    assert a == b == c


def test_report_json_round_trip():
    rep = run_benchmark(small(variants=["CFSR", "CFSRAG"]))
    back = ExperimentReport.from_dict(json.loads(dumps(rep)))
    assert back == rep


def test_min_max_scale():
    X = np.array([[1.0, 3.0, 2.0], [5.0, 5.0, 5.0]])
    np.testing.assert_array_equal(min_max_scale(X), [[0, 1, 0.5], [0, 0, 0]])


def test_scale_flag_changes_input():
    a = run_benchmark(ExperimentConfig(dataset="zoo", runs=1, max_iter=3, restarts=1))
    b = run_benchmark(ExperimentConfig(dataset="zoo", runs=1, max_iter=3, restarts=1,
                                       scale_features=True))
    assert a.records[0]["final_objective"] != b.records[0]["final_objective"]


def test_workers_env(monkeypatch):
    monkeypatch.setenv("CFSRAG_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("CFSRAG_WORKERS", "x")
    with pytest.raises(ValueError):
        default_workers()


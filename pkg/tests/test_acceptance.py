"""Acceptance suite.  Each test records one pass/fail line that is printed
in the pytest terminal summary."""
import time

import numpy as np
import pytest

from cfsrag.cli import main
from cfsrag.data import SyntheticSpec, make_blobs
from cfsrag.factorize import (Hyperparams, fit, gradient_check, init_state, kkt_products,
                              kkt_residuals, objective, objective_trace_form, step)
from cfsrag.graph import solve_affinity_row
from cfsrag.harness import DEFAULT_GRID, ExperimentConfig, run_ablation, run_benchmark
from cfsrag.metrics import acc, extract_labels, nmi, purity
from cfsrag.stats import friedman_ranks, wilcoxon_signed_rank

from oracles import acc_bruteforce, affinity_row_oracle
from test_stats import table2

pytestmark = pytest.mark.slow


def test_affinity_closed_form(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, bad_rows = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(3, 11))
        p = int(rng.integers(1, n - 1))
        self_index = int(rng.integers(n))
        d = rng.permutation(np.linspace(0.1, 5.0, n)) + rng.uniform(0, 1e-3, n)
        d[self_index] = 0.0
        got = solve_affinity_row(d, self_index, p)
        ref = affinity_row_oracle(d, self_index, p)
        worst = max(worst, float(np.abs(got - ref).max()))
        if abs(got.sum() - 1) > 1e-12 or int((got > 0).sum()) != p:
            bad_rows += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and bad_rows == 0 and elapsed < 10
    criterion(1, ok, f"max err {worst:.1e}, bad rows {bad_rows}, {elapsed:.1f}s")
    assert ok


def test_monotone_descent(criterion):
    t0 = time.perf_counter()
    worst = -np.inf
    for variant in ("NMF", "CF", "CFSR", "CFSR_F", "CFSRG"):
        for seed in range(20):
            X, _ = make_blobs(SyntheticSpec(3, 20, 10, seed=seed))
            hp = Hyperparams(3, alpha=1.0, beta=0.1, lam=0.1, neighbors=5, max_iter=200,
                             rel_tol=1e-300, seed=seed, variant=variant)
            h = np.array(fit(X, hp).state.objective_history)
            worst = max(worst, float(np.max(np.diff(h) / h[:-1])))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 60
    criterion(2, ok, f"largest relative increase {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_gradients(criterion):
    X, _ = make_blobs(SyntheticSpec(3, 10, 6, seed=7))
    worst = {}
    for variant in ("CFSRG", "CFSRAG"):
        for seed in range(3):
            hp = Hyperparams(3, alpha=0.7, beta=0.3, lam=0.2, neighbors=4, variant=variant,
                             seed=seed)
            s = init_state(X, hp)
            for _ in range(seed + 1):
                step(s, hp)
            for block, err in gradient_check(s, hp, n_coords=20, seed=seed).items():
                worst[block] = max(worst.get(block, 0.0), err)
    ok = max(worst.values()) <= 1e-5
    criterion(3, ok, "max relative error " + ", ".join(f"{b} {e:.1e}" for b, e in worst.items()))
    assert ok


def test_kkt_residuals(criterion):
    worst, worst_abs = {}, {}
    converged = 0
    for seed in range(3):
        X, _ = make_blobs(SyntheticSpec(3, 20, 10, seed=seed))
        hp = Hyperparams(3, alpha=1.0, beta=0.1, lam=0.1, neighbors=5, rel_tol=1e-8,
                         max_iter=100000, seed=seed)
        res = fit(X, hp)
        converged += res.converged
        for block, r in kkt_residuals(res.state, hp).items():
            worst[block] = max(worst.get(block, 0.0), r)
        for block, (prod, _, den) in kkt_products(res.state, hp).items():
            worst_abs[block] = max(worst_abs.get(block, 0.0),
                                   float(np.abs(prod).max() / np.abs(den).max()))
    ok = converged == 3 and max(worst.values()) <= 1e-5
    criterion(4, ok, f"{converged}/3 converged; residual " +
              ", ".join(f"{b} {e:.1e}" for b, e in worst.items()) +
              " (vs max|den|: " + ", ".join(f"{b} {e:.1e}" for b, e in worst_abs.items()) + ")")
    assert ok


def test_objective_forms(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    variants = ["CFSR", "CFSR_F", "CFSRG", "CFSRAG"]
    for i in range(100):
        n = int(rng.integers(6, 15))
        X = rng.standard_normal((int(rng.integers(2, 8)), n))
        hp = Hyperparams(3, alpha=float(rng.uniform(0.01, 10)), beta=float(rng.uniform(0.01, 10)),
                         lam=float(rng.uniform(0.01, 10)), neighbors=3,
                         variant=variants[i % 4], seed=i)
        s = init_state(X, hp)
        s.Z = rng.random((n, n))
        a, b = objective(s, hp), objective_trace_form(s, hp)
        worst = max(worst, abs(a - b) / abs(a))
    ok = worst <= 1e-8
    criterion(5, ok, f"max relative gap {worst:.1e}")
    assert ok


def test_metric_oracles(criterion):
    rng = np.random.default_rng(11)
    acc_bad = pur_bad = nmi_bad = 0
    for _ in range(500):
        n = int(rng.integers(1, 21))
        c = int(rng.integers(1, 7))
        true = rng.integers(0, c, n)
        pred = rng.integers(0, c, n)
        a = acc(true, pred)
        acc_bad += abs(a - acc_bruteforce(true, pred)) > 1e-12
        pur_bad += purity(true, pred) < a - 1e-12
        relabel = rng.permutation(10)[true]
        nmi_bad += nmi(true, relabel) != 1.0
    independent = nmi([0, 0, 1, 1], [0, 1, 0, 1])
    ok = acc_bad == pur_bad == nmi_bad == 0 and independent == 0.0
    criterion(6, ok, f"acc mismatches {acc_bad}, purity < acc {pur_bad}, "
              f"relabel NMI != 1 {nmi_bad}, independent NMI {independent}")
    assert ok


def test_published_statistics(criterion):
    fr = friedman_ranks(table2())
    r = fr.mean_ranks
    ranks_ok = (abs(r["CFSRAG"] - 1.00) <= 0.01 and abs(r["M8"] - 2.92) <= 0.01
                and abs(r["M7"] - 3.25) <= 0.01 and abs(r["M6"] - 3.67) <= 0.01)
    diffs = np.arange(1, 13) * 0.37 + 0.1
    w = wilcoxon_signed_rank(diffs, np.zeros(12))
    wil_ok = w.r_plus == 78.0 and w.r_minus == 0.0 and abs(w.p_value / 2.22e-3 - 1) <= 0.01
    ok = ranks_ok and wil_ok
    criterion(7, ok, f"F-rank CFSRAG {r['CFSRAG']:.2f} M8 {r['M8']:.2f} M7 {r['M7']:.2f} "
              f"M6 {r['M6']:.2f}; R+ {w.r_plus} R- {w.r_minus} p {w.p_value:.3e}")
    assert ok


def test_separable_blobs(criterion):
    t0 = time.perf_counter()
    perfect = 0
    for seed in range(10):
        X, y = make_blobs(SyntheticSpec(3, 30, 10, spread=10.0, stddev=1.0, seed=seed))
        hp = Hyperparams(3, alpha=1.0, beta=0.1, lam=0.1, neighbors=5, seed=seed)
        pred = extract_labels(fit(X, hp).state.V, "kmeans", seed=seed).predicted
        perfect += acc(y.labels, pred) == 1.0 and nmi(y.labels, pred) == 1.0
    elapsed = time.perf_counter() - t0
    ok = perfect >= 9 and elapsed < 30
    criterion(8, ok, f"{perfect}/10 seeds perfect, {elapsed:.1f}s")
    assert ok


def zoo_config(variants):
    return ExperimentConfig(dataset="zoo", variants=variants, alpha=DEFAULT_GRID,
                            beta=DEFAULT_GRID, lam=DEFAULT_GRID, neighbors=[3, 5, 7], runs=10)


@pytest.fixture(scope="module")
def zoo_main():
    t0 = time.perf_counter()
    report = run_benchmark(zoo_config(["CFSR", "CFSRAG"]))
    return report, time.perf_counter() - t0


def best_nmi(report, variant):
    return report.best_aggregate(variant)["mean"]["nmi"]


def test_zoo_reproduction(criterion, zoo_main):
    report, elapsed = zoo_main
    ours, base = best_nmi(report, "CFSRAG"), best_nmi(report, "CFSR")
    ok = ours >= 0.78 and ours > base and elapsed < 600
    criterion(9, ok, f"CFSRAG NMI {ours:.4f}, CFSR NMI {base:.4f}, {elapsed:.0f}s")
    assert ok


def ordering_holds(nmis):
    return (nmis["CFSR"] <= nmis["CFSR_F"] <= nmis["CFSRG"]
            and nmis["CFSRAG"] >= nmis["CFSRG"] - 0.02)


def test_ablation_ordering(criterion, zoo_main):
    # zoo: the two remaining variants share seeds with the main run by index
    rest = run_benchmark(zoo_config(["CFSR_F", "CFSRG"]))
    zoo = {v: best_nmi(zoo_main[0], v) for v in ("CFSR", "CFSRAG")}
    zoo.update({v: best_nmi(rest, v) for v in ("CFSR_F", "CFSRG")})
    # blobs: mean over five moderately overlapping fixtures, coarse grid
    coarse = [0.01, 1.0, 100.0]
    per_fixture = []
    for seed in range(5):
        cfg = ExperimentConfig(dataset=f"blobs:c=3,per=30,m=10,spread=5,stddev=1,seed={seed}",
                               alpha=coarse, beta=coarse, lam=coarse, neighbors=[5], runs=5,
                               max_iter=300)
        rep = run_ablation(cfg)
        per_fixture.append({v: best_nmi(rep, v) for v in ("CFSR", "CFSR_F", "CFSRG", "CFSRAG")})
    blobs = {v: float(np.mean([f[v] for f in per_fixture])) for v in per_fixture[0]}
    ok = ordering_holds(zoo) and ordering_holds(blobs)

    def fmt(d):
        return " ".join(f"{v} {d[v]:.4f}" for v in ("CFSR", "CFSR_F", "CFSRG", "CFSRAG"))
    criterion(10, ok, f"zoo: {fmt(zoo)}; blobs: {fmt(blobs)}")
    assert ok


def test_bench_determinism(criterion, tmp_path, capsys):
    args = ["bench", "--dataset", "zoo", "--variant", "CFSR,CFSRG,CFSRAG", "--runs", "3",
            "--alpha", "0.1,1", "--beta", "0.1", "--lambda", "0.1", "--neighbors", "5",
            "--format", "json"]
    outputs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        assert main(args + ["--workers", str(workers), "--out", str(out)]) == 0
        outputs.append((out / "report.json").read_bytes())
    capsys.readouterr()
    ok = outputs[0] == outputs[1]
    criterion(11, ok, f"report.json identical across 1 and 2 workers: {ok} "
              f"({len(outputs[0])} bytes)")
    assert ok

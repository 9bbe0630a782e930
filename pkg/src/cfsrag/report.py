"""JSON, CSV and Markdown renderings of experiment reports."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .factorize import Variant
from .harness import METRICS, ExperimentReport
from .stats import ScoreTable, friedman_ranks, total_win_loss, wilcoxon_signed_rank, win_loss

FORMATS = ("json", "csv", "md")


def pm(mean, std) -> str:
    """Percent cell ``87.08±0.97`` from fractional mean and std."""
    if mean is None:
        return "n/a"
    return f"{100 * mean:.2f}±{100 * std:.2f}"


def fmt_p(p) -> str:
    return "n/a" if p is None else f"{p:.2e}"


def dumps(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def load_report(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))


def summary_rows(report: ExperimentReport) -> List[dict]:
    best = report.best
    rows = []
    for agg in sorted(report.aggregates, key=lambda a: (a.get("sweep_p", 0),
                                                        Variant(a["variant"]).label, a["grid_index"])):
        row = {"dataset": report.dataset["id"], "variant": Variant(agg["variant"]).label}
        if "sweep_p" in agg:
            row["sweep_p"] = agg["sweep_p"]
        row.update({k: agg[k] for k in ("grid_index", "alpha", "beta", "lambda", "neighbors",
                                         "runs", "failed")})
        row["best"] = int(best.get(agg["variant"]) == agg["grid_index"] and "sweep_p" not in agg)
        for m in METRICS:
            row[m] = pm(agg["mean"][m], agg["std"][m])
        rows.append(row)
    return rows


def _csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def numeric_rows(report: ExperimentReport) -> List[dict]:
    """Per grid point means and stds as plain numbers (for plotting)."""
    rows = []
    for agg in report.aggregates:
        row = {"variant": Variant(agg["variant"]).label}
        if "sweep_p" in agg:
            row["sweep_p"] = agg["sweep_p"]
        row.update({k: agg[k] for k in ("grid_index", "alpha", "beta", "lambda", "neighbors", "runs")})
        for m in METRICS:
            row[m] = agg["mean"][m]
            row[f"{m}_std"] = agg["std"][m]
        rows.append(row)
    return rows


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _comparison_footer(comp: dict, columns: List[str]) -> List[List[str]]:
    rows = []
    ref = comp.get("reference")
    if "win_loss" in comp:
        cells = []
        for c in columns:
            if c == ref:
                w, lo = comp["win_loss_total"]
                cells.append(f"{w}/{lo}*")
            else:
                w, lo = comp["win_loss"][c]
                cells.append(f"{w}/{lo}")
        rows.append(["Win/Loss", ""] + cells)
    ranks = comp["friedman"]["mean_ranks"]
    rows.append(["F-rank", ""] + [f"{ranks[c]:.2f}" for c in columns])
    if "signed_rank" in comp:
        ps = {s["b"]: s["p_value"] for s in comp["signed_rank"]}
        rows.append(["p-value", ""] + ["-" if c == ref else fmt_p(ps.get(c)) for c in columns])
    return rows


def markdown(report: ExperimentReport) -> str:
    out = [f"# {report.kind}: {report.dataset['id']}\n"]
    if report.kind == "sweep-p":
        header = ["p", "Variant"] + [m.upper() for m in METRICS]
        rows = [[c["neighbors"], Variant(c["variant"]).label]
                + [pm(c[m], c[f"{m}_std"]) for m in METRICS] for c in report.curves]
        out.append(_md_table(header, rows))
        return "\n".join(out)
    variants = [v for v in report.config["variants"] if v in report.best]
    labels = [Variant(v).label for v in variants]
    rows = []
    for m in METRICS:
        cells = [pm(report.best_aggregate(v)["mean"][m], report.best_aggregate(v)["std"][m])
                 for v in variants]
        rows.append([report.dataset["id"], m.upper()] + cells)
    if report.comparison:
        rows += _comparison_footer(report.comparison, labels)
    out.append(_md_table(["Dataset", "Metric"] + labels, rows))
    settings = [[Variant(v).label] + [report.best_aggregate(v)[k]
                                      for k in ("alpha", "beta", "lambda", "neighbors")]
                for v in variants]
    out.append("Selected grid points (highest mean NMI):\n")
    out.append(_md_table(["Variant", "alpha", "beta", "lambda", "p"], settings))
    if report.comparison and "pairwise" in report.comparison:
        out.append("Pairwise signed-rank tests:\n")
        out.append(_md_table(["Comparison", "R+", "R-", "p-value"],
                             [[f"{s['a']} vs {s['b']}", s["r_plus"], s["r_minus"], fmt_p(s["p_value"])]
                              for s in report.comparison["pairwise"]]))
    if report.failed_runs:
        out.append(f"{report.failed_runs} failed runs excluded from aggregates.\n")
    return "\n".join(out)


def render_report(report: ExperimentReport, formats: Sequence[str], out_dir) -> List[Path]:
    """Write ``report.json``, ``summary.csv`` (plus ``curves.csv`` or
    ``grid.csv`` where relevant) and ``report.md`` into ``out_dir``."""
    for f in formats:
        if f not in FORMATS:
            raise ValueError(f"unknown format {f!r}; choose from {FORMATS}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files: Dict[str, str] = {}
    if "json" in formats:
        files["report.json"] = dumps(report)
    if "csv" in formats:
        files["summary.csv"] = _csv(summary_rows(report))
        if report.curves:
            files["curves.csv"] = _csv(report.curves)
        if report.kind in ("grid", "sweep-p"):
            files["grid.csv"] = _csv(numeric_rows(report))
    if "md" in formats:
        files["report.md"] = markdown(report)
    written = []
    for name, text in files.items():
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written


def combine(reports: Sequence[ExperimentReport], reference: str = "CFSRAG") -> dict:
    """Cross-dataset table in the (dataset, metric) x model layout.

    Models missing from any report are dropped.  The signed-rank test pairs
    the row means, so it needs at least five rows (two datasets).
    """
    common = None
    for r in reports:
        have = [v for v in r.config["variants"] if v in r.best]
        common = have if common is None else [v for v in common if v in have]
    if not common or len(common) < 2:
        raise ValueError("need at least two models present in every report")
    labels = [Variant(v).label for v in common]
    rows, means, stds = [], [], []
    for r in reports:
        for m in METRICS:
            rows.append((r.dataset["id"], m))
            means.append([100 * r.best_aggregate(v)["mean"][m] for v in common])
            stds.append([100 * r.best_aggregate(v)["std"][m] for v in common])
    table = ScoreTable(rows, labels, np.array(means))
    ref = Variant(reference).label
    comp = {"reference": ref, "rows": [list(r) for r in rows], "columns": labels,
            "mean": table.values.tolist(), "std": np.array(stds).tolist()}
    fr = friedman_ranks(table)
    comp["friedman"] = {"mean_ranks": fr.mean_ranks, "chi2": fr.chi2, "p_value": fr.p_value}
    if ref in labels:
        wl = win_loss(table, ref)
        comp["win_loss"] = {k: list(v) for k, v in wl.items()}
        comp["win_loss_total"] = list(total_win_loss(wl))
        comp["signed_rank"] = []
        for c in labels:
            if c == ref:
                continue
            entry = {"a": ref, "b": c}
            try:
                entry.update(wilcoxon_signed_rank(table.column(ref), table.column(c)).as_dict())
            except ValueError as exc:
                entry.update(p_value=None, note=str(exc))
            comp["signed_rank"].append(entry)
    return comp


def combined_markdown(comp: dict) -> str:
    labels = comp["columns"]
    rows = [[d, m.upper()] + [f"{a:.2f}±{s:.2f}" for a, s in zip(mu, sd)]
            for (d, m), mu, sd in zip(comp["rows"], comp["mean"], comp["std"])]
    rows += _comparison_footer(comp, labels)
    return _md_table(["Dataset", "Metric"] + labels, rows)


def render_combined(comp: dict, formats: Sequence[str], out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if "json" in formats:
        files["combined.json"] = json.dumps(comp, indent=2, sort_keys=True) + "\n"
    if "csv" in formats:
        rows = [{"dataset": d, "metric": m,
                 **{c: f"{a:.2f}±{s:.2f}" for c, a, s in zip(comp["columns"], mu, sd)}}
                for (d, m), mu, sd in zip(comp["rows"], comp["mean"], comp["std"])]
        files["combined.csv"] = _csv(rows)
    if "md" in formats:
        files["combined.md"] = combined_markdown(comp)
    written = []
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        written.append(out / name)
    return written

"""Command-line front end.

Options can also come from a config file (``--config FILE``) holding one
``key = value`` pair per line; ``#`` starts a comment, lists are comma
separated and keys are the long option names without dashes (``max-iter``
and ``max_iter`` both work).  Command-line flags override the file.
Example::

    dataset = zoo
    variant = CFSR, CFSR-F, CFSRG, CFSRAG
    alpha = 0.1, 1, 10
    runs = 10
    seed = 42
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import __version__
from .data import load_dataset
from .factorize import Hyperparams, Variant, fit, save_checkpoint
from .graph import build_graph, export_edges
from .harness import (DEFAULT_GRID, DEFAULT_P_GRID, ExperimentConfig, default_workers, min_max_scale,
                      run_ablation, run_benchmark, run_sweep_p)
from .metrics import extract_labels, score
from .report import (FORMATS, combine, combined_markdown, load_report, markdown, render_combined,
                     render_report)

log = logging.getLogger("cfsrag")


def parse_bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _list(cast):
    def parse(text):
        try:
            vals = [cast(t) for t in str(text).split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
        if not vals:
            raise argparse.ArgumentTypeError("empty list")
        return vals
    return parse


def _uint64(text) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return v


# option name -> (argparse type, default)
OPTIONS = {
    "dataset": (str, "zoo"),
    "variant": (_list(str), None),
    "alpha": (_list(float), None),
    "beta": (_list(float), None),
    "lambda": (_list(float), None),
    "neighbors": (_list(int), None),
    "clusters": (int, None),
    "runs": (int, 10),
    "seed": (_uint64, 0),
    "max_iter": (int, 200),
    "tol": (float, 1e-6),
    "extract": (str, "kmeans"),
    "restarts": (int, 10),
    "scale_features": (parse_bool, False),
    "workers": (int, None),
    "out": (str, None),
    "format": (_list(str), None),
}


def read_config(path) -> dict:
    """Parse a ``key = value`` config file into typed option values."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            if key not in OPTIONS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = OPTIONS[key][0](value.strip())
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value options file")
    for name, (typ, _) in OPTIONS.items():
        flag = "--" + name.replace("_", "-")
        kw = {"type": typ, "default": None, "dest": name}
        if name == "variant":
            kw["help"] = "variant name or comma list (NMF, CF, CFSR, CFSR-F, CFSRG, CFSRAG)"
        elif name == "dataset":
            kw["help"] = "zoo, standin:NAME[:SEED], blobs:KEY=VAL,... or a CSV path"
        elif name == "format":
            kw["help"] = "comma list of json, csv, md"
        elif name == "workers":
            kw["help"] = "worker processes (default: $CFSRAG_WORKERS or 1)"
        elif name == "neighbors":
            kw["help"] = "neighbour count p (list for grids and sweeps)"
        p.add_argument(flag, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfsrag", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "graph": "build the affinity graph and export its edges",
        "fit": "single fit and score",
        "bench": "multi-seed benchmark over variants and grid points",
        "ablate": "the four self-representation variants with pairwise tests",
        "sweep-p": "benchmark per neighbour count",
        "grid": "hyperparameter sensitivity grid (defaults to 1e-3..1e3 for alpha/beta/lambda)",
    }
    for name, text in helps.items():
        _add_common(sub.add_parser(name, help=text))
    rp = sub.add_parser("report", help="re-render or combine saved JSON reports")
    rp.add_argument("inputs", nargs="+", help="report.json files")
    rp.add_argument("--format", type=_list(str), default=None)
    rp.add_argument("--out", default=None)
    rp.add_argument("--reference", default="CFSRAG")
    return parser


def resolve(args) -> dict:
    """Merge defaults, the config file and explicit flags."""
    opts = {k: d for k, (_, d) in OPTIONS.items()}
    if getattr(args, "config", None):
        opts.update(read_config(args.config))
    for k in OPTIONS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


def experiment_config(opts: dict, grid_default: Optional[List[float]] = None,
                      variants_default=("CFSRAG",)) -> ExperimentConfig:
    g = grid_default
    return ExperimentConfig(
        dataset=opts["dataset"], variants=list(opts["variant"] or variants_default),
        alpha=opts["alpha"] or (g or [1.0]), beta=opts["beta"] or (g or [0.1]),
        lam=opts["lambda"] or (g or [0.1]), neighbors=opts["neighbors"] or [5],
        clusters=opts["clusters"], runs=opts["runs"], seed=opts["seed"],
        max_iter=opts["max_iter"], rel_tol=opts["tol"], extract=opts["extract"],
        restarts=opts["restarts"], scale_features=opts["scale_features"])


def _emit(report, opts) -> None:
    formats = opts["format"] or list(FORMATS)
    if opts["out"]:
        for path in render_report(report, formats, opts["out"]):
            log.info("wrote %s", path)
    sys.stdout.write(markdown(report))


def cmd_graph(opts) -> int:
    X, _, desc = load_dataset(opts["dataset"])
    Xv = min_max_scale(X.values) if opts["scale_features"] else X.values
    p = (opts["neighbors"] or [5])[0]
    g = build_graph(Xv, p)
    n_edges = int(np.count_nonzero(np.triu(g.W)))
    print(f"{desc.id}: n={g.n}, p={p}, {n_edges} edges, "
          f"connected components={_components(g.W)}")
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        export_edges(g.W, out / "edges.txt")
        np.savetxt(out / "affinity.txt", g.A, fmt="%.17g")
        print(f"wrote {out / 'edges.txt'} and {out / 'affinity.txt'}")
    return 0


def _components(W) -> int:
    return int(connected_components(W > 0, directed=False)[0])


def cmd_fit(opts) -> int:
    X, y, desc = load_dataset(opts["dataset"])
    Xv = min_max_scale(X.values) if opts["scale_features"] else X.values
    variant = Variant.parse((opts["variant"] or ["CFSRAG"])[0])
    c = opts["clusters"] or (y.class_count if y is not None else None)
    if c is None:
        raise ValueError("--clusters is required for unlabelled data")
    hp = Hyperparams(clusters=c, alpha=(opts["alpha"] or [1.0])[0], beta=(opts["beta"] or [0.1])[0],
                     lam=(opts["lambda"] or [0.1])[0], neighbors=(opts["neighbors"] or [5])[0],
                     max_iter=opts["max_iter"], rel_tol=opts["tol"], seed=opts["seed"],
                     variant=variant)
    res = fit(Xv, hp)
    assign = extract_labels(res.state.V, opts["extract"], opts["restarts"], seed=hp.seed)
    out = {"dataset": desc.id, "hyperparams": hp.as_dict(), "iterations": res.iterations_run,
           "converged": res.converged, "final_objective": res.final_objective,
           "labels": assign.predicted.tolist()}
    if y is not None:
        out["scores"] = score(y, assign).as_dict()
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if opts["out"]:
        d = Path(opts["out"])
        d.mkdir(parents=True, exist_ok=True)
        (d / "fit.json").write_text(text, encoding="utf-8")
        save_checkpoint(res.state, d / "checkpoint.npz")
    sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.inputs]
    formats = args.format or list(FORMATS)
    if len(reports) == 1:
        if args.out:
            render_report(reports[0], formats, args.out)
        sys.stdout.write(markdown(reports[0]))
        return 0
    comp = combine(reports, reference=args.reference)
    if args.out:
        render_combined(comp, formats, args.out)
    sys.stdout.write(combined_markdown(comp))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        opts = resolve(args)
        if opts["format"]:
            bad = [f for f in opts["format"] if f not in FORMATS]
            if bad:
                parser.error(f"unknown format(s) {bad}; choose from {FORMATS}")
        if args.command == "graph":
            return cmd_graph(opts)
        if args.command == "fit":
            return cmd_fit(opts)
        workers = opts["workers"] or default_workers()
        if args.command == "bench":
            report = run_benchmark(experiment_config(opts), workers=workers)
        elif args.command == "grid":
            report = run_benchmark(experiment_config(opts, DEFAULT_GRID), workers=workers, kind="grid")
        elif args.command == "ablate":
            report = run_ablation(experiment_config(opts), workers=workers)
        else:
            cfg = experiment_config(opts)
            report = run_sweep_p(cfg, p_grid=opts["neighbors"] or DEFAULT_P_GRID, workers=workers)
        _emit(report, opts)
        return 0
    except (ValueError, OSError) as exc:
        print(f"cfsrag {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Dataset loading, synthetic fixtures and shape validation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .matrix import DataMatrix, LabelVector


@dataclass(frozen=True)
class DatasetDescriptor:
    id: str
    size: int
    dimensionality: int
    classes: int
    source: Optional[str] = None

    def __post_init__(self):
        if min(self.size, self.dimensionality, self.classes) < 1:
            raise ValueError("size, dimensionality and classes must be positive")
        if self.classes > self.size:
            raise ValueError("more classes than samples")


# published shapes of the four benchmark sets
TABLE1 = {
    "zoo": DatasetDescriptor("zoo", 101, 16, 7),
    "JAFFE": DatasetDescriptor("JAFFE", 213, 4096, 10),
    "ORL": DatasetDescriptor("ORL", 400, 1024, 40),
    "YALE": DatasetDescriptor("YALE", 165, 1024, 15),
}


class DataFormatError(ValueError):
    pass


class SchemaError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SyntheticSpec:
    clusters: int
    per_cluster: int
    dim: int
    spread: float = 10.0
    stddev: float = 1.0
    seed: int = 0
    nonnegative: bool = True

    def __post_init__(self):
        if not self.spread > 0 or self.stddev < 0:
            raise ValueError("spread must be > 0 and stddev >= 0")
        if self.clusters < 1 or self.per_cluster < 1 or self.dim < 1:
            raise ValueError("clusters, per_cluster and dim must be positive")


def densify_labels(raw) -> Tuple[np.ndarray, list]:
    """Map arbitrary labels to ``0..c-1`` in order of first appearance."""
    ids, names = {}, []
    out = np.empty(len(raw), dtype=np.int64)
    for i, lab in enumerate(raw):
        if lab not in ids:
            ids[lab] = len(names)
            names.append(lab)
        out[i] = ids[lab]
    return out, names


def _looks_numeric(cells) -> bool:
    try:
        [float(c) for c in cells]
    except ValueError:
        return False
    return True


def load_csv(path, label_column: Union[str, None] = "last", delimiter: str = ",",
             header: Optional[bool] = None):
    """Read a row-per-sample CSV.

    Parameters
    ----------
    label_column : "last", a header name, or None for unlabelled data.
    header : bool or None
        None sniffs: the first row is a header when it is not all numeric.

    Returns
    -------
    (DataMatrix, LabelVector or None, DatasetDescriptor)
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    if header is None:
        header = not _looks_numeric(rows[0]) and not (label_column == "last"
                                                      and _looks_numeric(rows[0][:-1]))
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    width = len(rows[0])
    for r, row in enumerate(body):
        if len(row) != width:
            line = r + (2 if header else 1)
            raise DataFormatError(f"{path}: line {line} has {len(row)} fields, expected {width}")

    if label_column is None or label_column == "none":
        lab_idx = None
    elif label_column == "last":
        lab_idx = width - 1
    else:
        if names is None or label_column not in names:
            raise DataFormatError(f"{path}: label column {label_column!r} not found")
        lab_idx = names.index(label_column)

    feat_idx = [j for j in range(width) if j != lab_idx]
    values = np.empty((len(body), len(feat_idx)))
    for r, row in enumerate(body):
        for k, j in enumerate(feat_idx):
            try:
                values[r, k] = float(row[j])
            except ValueError:
                line = r + (2 if header else 1)
                raise DataFormatError(f"{path}: line {line}, column {j + 1}: "
                                      f"non-numeric feature {row[j]!r}") from None
    feat_names = [names[j] for j in feat_idx] if names else None
    X = DataMatrix(values.T, feat_names)
    labels = None
    c = 0
    if lab_idx is not None:
        dense, classes = densify_labels([row[lab_idx].strip() for row in body])
        labels = LabelVector(dense)
        c = len(classes)
    desc = DatasetDescriptor(path.stem, X.sample_count, X.feature_dim, max(c, 1), str(path))
    return X, labels, desc


def save_csv(path, X, labels=None, feature_names=None) -> None:
    """Write samples as rows with 17 significant digits; labels go last."""
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    if feature_names is None and isinstance(X, DataMatrix):
        feature_names = X.feature_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if feature_names is not None:
            w.writerow(list(feature_names) + (["label"] if labels is not None else []))
        lab = None if labels is None else np.asarray(getattr(labels, "labels", labels))
        for i in range(Xv.shape[1]):
            row = [f"{v:.17g}" for v in Xv[:, i]]
            if lab is not None:
                row.append(str(lab[i]))
            w.writerow(row)


def make_blobs(spec: SyntheticSpec):
    """Gaussian clusters around seeded centres drawn uniformly in ``[0, spread)^m``.

    With ``nonnegative`` (the default) every feature is shifted so its
    minimum is zero; distances are unaffected.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.uniform(0.0, spec.spread, size=(spec.clusters, spec.dim))
    labels = np.repeat(np.arange(spec.clusters), spec.per_cluster)
    noise = rng.standard_normal((labels.size, spec.dim)) * spec.stddev
    rows = centers[labels] + noise
    if spec.nonnegative:
        rows = rows - np.minimum(rows.min(axis=0), 0.0)
    return DataMatrix.from_samples(rows), LabelVector(labels)


def make_standin(name: str, seed: int = 0, spread: float = 10.0, stddev: float = 1.0):
    """Synthetic blobs with the published shape of ``name`` (see TABLE1)."""
    desc = TABLE1[name]
    rng = np.random.default_rng(seed)
    sizes = np.full(desc.classes, desc.size // desc.classes)
    sizes[: desc.size % desc.classes] += 1
    centers = rng.uniform(0.0, spread, size=(desc.classes, desc.dimensionality))
    labels = np.repeat(np.arange(desc.classes), sizes)
    rows = centers[labels] + rng.standard_normal((desc.size, desc.dimensionality)) * stddev
    rows -= np.minimum(rows.min(axis=0), 0.0)
    return DataMatrix.from_samples(rows), LabelVector(labels)


def zoo_path() -> Path:
    return Path(str(resources.files("cfsrag") / "datasets" / "zoo.csv"))


def load_zoo():
    """The UCI zoo table bundled with the package (101 animals, 16 features, 7 classes)."""
    X, y, desc = load_csv(zoo_path(), label_column="type")
    return X, y, DatasetDescriptor("zoo", desc.size, desc.dimensionality, desc.classes, desc.source)


_BLOB_KEYS = {"c": ("clusters", int), "per": ("per_cluster", int), "m": ("dim", int),
              "spread": ("spread", float), "stddev": ("stddev", float), "seed": ("seed", int)}


def load_dataset(ref: str):
    """Resolve a dataset reference.

    ``zoo``
        the bundled UCI table.
    ``standin:NAME[:SEED]``
        synthetic data with the published shape of NAME (JAFFE, ORL, YALE, zoo).
    ``blobs:c=3,per=30,m=10,spread=10,stddev=1,seed=0``
        Gaussian blobs; omitted keys take those defaults.
    anything else
        a CSV path with the label in the last column.
    """
    if ref == "zoo":
        return load_zoo()
    if ref.startswith("standin:"):
        parts = ref.split(":")
        name = parts[1]
        if name not in TABLE1:
            raise ValueError(f"unknown stand-in {name!r}; choose from {sorted(TABLE1)}")
        seed = int(parts[2]) if len(parts) > 2 else 0
        X, y = make_standin(name, seed=seed)
        return X, y, DatasetDescriptor(ref, X.sample_count, X.feature_dim, y.class_count)
    if ref.startswith("blobs:") or ref == "blobs":
        kw = {"clusters": 3, "per_cluster": 30, "dim": 10}
        body = ref.partition(":")[2]
        for item in filter(None, body.split(",")):
            key, _, val = item.partition("=")
            if key.strip() not in _BLOB_KEYS:
                raise ValueError(f"unknown blob key {key!r}; use {sorted(_BLOB_KEYS)}")
            name, cast = _BLOB_KEYS[key.strip()]
            kw[name] = cast(val)
        X, y = make_blobs(SyntheticSpec(**kw))
        return X, y, DatasetDescriptor(ref, X.sample_count, X.feature_dim, y.class_count)
    return load_csv(ref)


def validate(descriptor: DatasetDescriptor, X, labels=None) -> None:
    """Check loaded data against a descriptor; raises SchemaError listing every mismatch."""
    Xv = X.values if isinstance(X, DataMatrix) else np.asarray(X)
    problems = []
    m, n = Xv.shape
    if n != descriptor.size:
        problems.append(f"size n: expected {descriptor.size}, got {n}")
    if m != descriptor.dimensionality:
        problems.append(f"dimensionality m: expected {descriptor.dimensionality}, got {m}")
    if labels is not None:
        lab = np.asarray(getattr(labels, "labels", labels))
        if lab.size != n:
            problems.append(f"label count: expected {n}, got {lab.size}")
        present = set(np.unique(lab).tolist())
        missing = [k for k in range(descriptor.classes) if k not in present]
        if missing:
            problems.append(f"classes c: expected {descriptor.classes}, "
                            f"class ids {missing} missing")
        extra = sorted(k for k in present if not 0 <= k < descriptor.classes)
        if extra:
            problems.append(f"classes c: expected {descriptor.classes}, "
                            f"unexpected class ids {extra}")
    if problems:
        raise SchemaError(problems)

"""Tabular binary-classification datasets with a binary protected attribute.

A :class:`Dataset` holds the fully encoded design matrix (standardized numeric
columns followed by one-hot blocks, in schema order), the binary favorable
label, the binary privileged-group indicator and a per-row split tag. Encoders
are always fitted on the train split only.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

logger = logging.getLogger(__name__)

TRAIN, VAL, TEST = "train", "val", "test"
SPLITS = (TRAIN, VAL, TEST)
MISSING = "<missing>"
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


class DataError(ValueError):
    """Raised for malformed inputs: missing files, schema mismatches, bad splits."""


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    mean: float = 0.0
    std: float = 1.0
    fill: float = 0.0

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical":
            if not self.categories or len(set(self.categories)) != len(self.categories):
                raise DataError(f"categorical feature {self.name!r} needs unique, nonempty categories")
        elif not self.std > 0:
            raise DataError(f"numeric feature {self.name!r} has non-positive std")

    @property
    def width(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1


@dataclass(frozen=True)
class Schema:
    """Describes how to read one CSV: label, protected attribute and column kinds.

    Schema files are YAML mappings with the keys ``name``, ``label``,
    ``favorable`` (list of label values meaning the favorable outcome),
    ``protected``, ``privileged`` (list of protected values meaning the
    privileged group), ``columns`` (feature name -> ``numeric`` or
    ``categorical``, in encoding order) and optionally ``missing_values``,
    ``include_protected_in_features`` and ``split_column`` (a column holding
    ``train``/``val``/``test`` tags that overrides random splitting).
    """

    name: str
    label: str
    favorable: tuple[str, ...]
    protected: str
    privileged: tuple[str, ...]
    columns: tuple[tuple[str, str], ...]
    missing_values: tuple[str, ...] = ("",)
    include_protected_in_features: bool = True
    split_column: str | None = None

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Schema":
        required = ("label", "favorable", "protected", "privileged", "columns")
        missing = [k for k in required if k not in raw]
        if missing:
            raise DataError(f"schema is missing keys: {', '.join(missing)}")
        columns = raw["columns"]
        if not isinstance(columns, Mapping) or not columns:
            raise DataError("schema 'columns' must be a nonempty mapping")
        return cls(
            name=str(raw.get("name", "dataset")),
            label=str(raw["label"]),
            favorable=tuple(str(v) for v in _as_list(raw["favorable"])),
            protected=str(raw["protected"]),
            privileged=tuple(str(v) for v in _as_list(raw["privileged"])),
            columns=tuple((str(k), str(v)) for k, v in columns.items()),
            missing_values=tuple(str(v) for v in _as_list(raw.get("missing_values", [""]))),
            include_protected_in_features=bool(raw.get("include_protected_in_features", True)),
            split_column=raw.get("split_column"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"schema file not found: {path}")
        with path.open(encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "label": self.label,
            "favorable": list(self.favorable),
            "protected": self.protected,
            "privileged": list(self.privileged),
            "missing_values": list(self.missing_values),
            "include_protected_in_features": self.include_protected_in_features,
            "columns": dict(self.columns),
        }
        if self.split_column:
            out["split_column"] = self.split_column
        return out

    def feature_columns(self) -> list[tuple[str, str]]:
        cols = [(n, k) for n, k in self.columns if n != self.label]
        if not self.include_protected_in_features:
            cols = [(n, k) for n, k in cols if n != self.protected]
        return cols


def bundled_schema(name: str) -> Schema:
    """Load one of the schemas shipped with the package (adult, compas, ...)."""
    ref = resources.files("fairnas") / "schemas" / f"{name}.yaml"
    if not ref.is_file():
        raise DataError(f"no bundled schema named {name!r}")
    return Schema.from_dict(yaml.safe_load(ref.read_text(encoding="utf-8")))


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    protected: np.ndarray
    split: np.ndarray
    specs: tuple[FeatureSpec, ...]
    name: str = "dataset"
    sample_weights: np.ndarray | None = None
    _fingerprint: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.labels)
        if n < 1:
            raise DataError("dataset has no rows")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DataError("features must be a 2-D matrix with one row per label")
        for name in ("protected", "split"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.sample_weights is not None and len(self.sample_weights) != n:
            raise DataError("sample_weights must have one entry per row")
        if sum(s.width for s in self.specs) != self.features.shape[1]:
            raise DataError("feature specs do not cover the encoded width")
        for arr in (self.features, self.labels, self.protected, self.split, self.sample_weights):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def blocks(self) -> list[tuple[int, int]]:
        """Column range ``(start, stop)`` of every feature in the encoded matrix."""
        out, start = [], 0
        for spec in self.specs:
            out.append((start, start + spec.width))
            start += spec.width
        return out

    @property
    def column_names(self) -> list[str]:
        names = []
        for spec in self.specs:
            if spec.kind == "numeric":
                names.append(spec.name)
            else:
                names.extend(f"{spec.name}={c}" for c in spec.categories)
        return names

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        return self.split == split

    def part(self, split: str):
        """Return ``(features, labels, protected, weights)`` restricted to one split."""
        m = self.mask(split)
        w = None if self.sample_weights is None else self.sample_weights[m]
        return self.features[m], self.labels[m], self.protected[m], w

    def fingerprint(self) -> str:
        if not self._fingerprint:
            h = hashlib.blake2b(digest_size=8)
            for arr in (self.features, self.labels, self.protected):
                h.update(np.ascontiguousarray(arr).tobytes())
            h.update("|".join(self.split.tolist()).encode())
            if self.sample_weights is not None:
                h.update(np.ascontiguousarray(self.sample_weights).tobytes())
            self._fingerprint.append(h.hexdigest())
        return self._fingerprint[0]

    def with_features(self, features: np.ndarray) -> "Dataset":
        return replace(self, features=np.asarray(features, dtype=np.float64), _fingerprint=[])

    def with_weights(self, weights: np.ndarray | None) -> "Dataset":
        w = None if weights is None else np.asarray(weights, dtype=np.float64)
        return replace(self, sample_weights=w, _fingerprint=[])

    def counts(self) -> dict[str, int]:
        return {s: int(self.mask(s).sum()) for s in SPLITS}


def decode_categorical(dataset: Dataset, name: str) -> list[str]:
    """Invert the one-hot encoding of feature ``name`` back to its strings."""
    for spec, (start, stop) in zip(dataset.specs, dataset.blocks):
        if spec.name == name:
            if spec.kind != "categorical":
                raise DataError(f"{name!r} is not categorical")
            idx = dataset.features[:, start:stop].argmax(axis=1)
            return [spec.categories[i] for i in idx]
    raise DataError(f"no feature named {name!r}")


# --------------------------------------------------------------------------- splits


def _check_fractions(fractions: Sequence[float], allow_zero: bool) -> tuple[float, float, float]:
    if len(fractions) != 3:
        raise DataError("fractions must be a (train, val, test) triple")
    f = tuple(float(x) for x in fractions)
    if any(x < 0 for x in f) or (not allow_zero and any(x <= 0 for x in f)):
        raise DataError(f"split fractions must be positive, got {f}")
    if f[0] <= 0:
        raise DataError("train fraction must be positive")
    if abs(sum(f) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(f)!r}")
    return f


def _cell_counts(m: int, fractions: tuple[float, float, float]) -> list[int]:
    """Largest-remainder apportionment of ``m`` rows, at least one per positive split."""
    shares = [m * f for f in fractions]
    counts = [int(np.floor(s)) for s in shares]
    order = sorted(range(3), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[: m - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if fractions[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: (counts[j] - shares[j], counts[j]))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def assign_splits(
    labels: np.ndarray,
    protected: np.ndarray,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    allow_zero: bool = False,
) -> np.ndarray:
    """Stratified split tags over the four (label, protected) cells.

    Every cell is apportioned across the splits within one row of its
    proportional share. Empty cells are skipped; a nonempty cell with fewer
    rows than there are (positive) splits is rejected.
    """
    f = _check_fractions(fractions, allow_zero)
    n_splits = sum(1 for x in f if x > 0)
    rng = np.random.default_rng(seed)
    tags = np.empty(len(labels), dtype="<U5")
    for y in (0, 1):
        for s in (0, 1):
            idx = np.flatnonzero((labels == y) & (protected == s))
            if len(idx) == 0:
                continue
            if len(idx) < n_splits:
                raise DataError(f"cell (label={y}, protected={s}) has {len(idx)} rows, fewer than {n_splits} splits")
            idx = rng.permutation(idx)
            counts = _cell_counts(len(idx), f)
            bounds = np.cumsum([0] + counts)
            for k, name in enumerate(SPLITS):
                tags[idx[bounds[k] : bounds[k + 1]]] = name
    return tags


def validate_splits(labels: np.ndarray, protected: np.ndarray, tags: np.ndarray) -> None:
    for name in SPLITS:
        m = tags == name
        if not m.any():
            continue
        if len(np.unique(protected[m])) < 2:
            raise DataError(f"group missing in split {name!r}")
        if len(np.unique(labels[m])) < 2:
            raise DataError(f"label missing in split {name!r}")
    if not (tags == TRAIN).any():
        raise DataError("train split is empty")


def split(dataset: Dataset, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> Dataset:
    """Re-draw the split tags of an encoded dataset (encoders are not re-fitted)."""
    tags = assign_splits(dataset.labels, dataset.protected, fractions, seed)
    validate_splits(dataset.labels, dataset.protected, tags)
    return replace(dataset, split=tags, _fingerprint=[])


def subsample(dataset: Dataset, max_rows: Mapping[str, int], seed: int = 0) -> Dataset:
    """Keep at most ``max_rows[split]`` rows per split, stratified on (label, protected)."""
    rng = np.random.default_rng(seed)
    keep = np.ones(dataset.n_rows, dtype=bool)
    for name, cap in max_rows.items():
        idx = np.flatnonzero(dataset.mask(name))
        if cap is None or len(idx) <= cap:
            continue
        frac = cap / len(idx)
        keep[idx] = False
        for y in (0, 1):
            for s in (0, 1):
                cell = idx[(dataset.labels[idx] == y) & (dataset.protected[idx] == s)]
                k = max(1, int(round(frac * len(cell)))) if len(cell) else 0
                keep[rng.permutation(cell)[:k]] = True
    w = None if dataset.sample_weights is None else dataset.sample_weights[keep]
    out = Dataset(
        features=dataset.features[keep].copy(),
        labels=dataset.labels[keep].copy(),
        protected=dataset.protected[keep].copy(),
        split=dataset.split[keep].copy(),
        specs=dataset.specs,
        name=dataset.name,
        sample_weights=w,
    )
    validate_splits(out.labels, out.protected, out.split)
    return out


# --------------------------------------------------------------------------- encoding


def _encode(
    raw: Mapping[str, list[str]],
    columns: Iterable[tuple[str, str]],
    missing: set[str],
    train: np.ndarray,
) -> tuple[np.ndarray, tuple[FeatureSpec, ...]]:
    blocks: list[np.ndarray] = []
    specs: list[FeatureSpec] = []
    for name, kind in columns:
        values = raw[name]
        if kind == "numeric":
            col = np.array([np.nan if v.strip() in missing else _to_float(v, name) for v in values])
            train_vals = col[train & ~np.isnan(col)]
            if len(train_vals) == 0:
                logger.warning("dropping numeric column %r: no observed train values", name)
                continue
            fill = float(np.median(train_vals))
            col = np.where(np.isnan(col), fill, col)
            tr = col[train]
            std = float(np.std(tr, ddof=1)) if len(tr) > 1 else 0.0
            if not std > 0:
                logger.warning("dropping constant numeric column %r", name)
                continue
            mean = float(np.mean(tr))
            blocks.append(((col - mean) / std)[:, None])
            specs.append(FeatureSpec(name, "numeric", mean=mean, std=std, fill=fill))
        elif kind == "categorical":
            vals = np.array([MISSING if v.strip() in missing else v.strip() for v in values], dtype=object)
            cats, freq = np.unique(vals[train], return_counts=True)
            cats = tuple(str(c) for c in cats)
            lookup = {c: i for i, c in enumerate(cats)}
            fallback = lookup.get(MISSING, int(np.argmax(freq)))
            unseen = {v for v in vals if v not in lookup}
            if unseen:
                logger.warning("column %r: %d categories unseen in train mapped to %r", name, len(unseen), cats[fallback])
            idx = np.array([lookup.get(v, fallback) for v in vals], dtype=np.int64)
            onehot = np.zeros((len(vals), len(cats)))
            onehot[np.arange(len(vals)), idx] = 1.0
            blocks.append(onehot)
            specs.append(FeatureSpec(name, "categorical", categories=cats))
        else:
            raise DataError(f"column {name!r} has unknown kind {kind!r}")
    if not blocks:
        raise DataError("all features are constant or empty")
    return np.hstack(blocks), tuple(specs)


def _to_float(text: str, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r} in numeric column {column!r}") from None


def load_csv(
    path: str | Path,
    schema: Schema,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> Dataset:
    """Read, split and encode a CSV according to ``schema``.

    Rows with a missing label or protected value are dropped. Unless the
    schema names a ``split_column``, splits are drawn with
    :func:`assign_splits`; zero fractions are accepted here (e.g. an all-train
    load), unlike in :func:`split`.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.label, schema.protected] + [n for n, _ in schema.columns]
        if schema.split_column:
            needed.append(schema.split_column)
        absent = sorted(set(needed) - set(header))
        if absent:
            raise DataError(f"schema/column mismatch: {path.name} lacks {', '.join(absent)}")
        rows = list(reader)

    missing = set(schema.missing_values)
    rows = [
        r for r in rows
        if r[schema.label].strip() not in missing and r[schema.protected].strip() not in missing
    ]
    if not rows:
        raise DataError("no rows with both label and protected attribute present")

    labels = np.array([r[schema.label].strip() in schema.favorable for r in rows], dtype=np.int8)
    protected = np.array([r[schema.protected].strip() in schema.privileged for r in rows], dtype=np.int8)
    if schema.split_column:
        tags = np.array([r[schema.split_column].strip() for r in rows], dtype="<U5")
        bad = set(tags.tolist()) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split tags {sorted(bad)}")
    else:
        tags = assign_splits(labels, protected, fractions, seed, allow_zero=True)
    validate_splits(labels, protected, tags)

    columns = schema.feature_columns()
    raw = {name: [r[name] for r in rows] for name, _ in columns}
    features, specs = _encode(raw, columns, missing, tags == TRAIN)
    return Dataset(features, labels, protected, tags, specs, name=schema.name)


def synthetic(n: int, bias: float, seed: int = 0, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> Dataset:
    """Linearly separable two-feature fixture with tunable label/group dependence.

    Labels are the sign of ``x1 + x2`` with a margin pushed in between the
    classes. Privileged membership has probability 0.5 for favorable rows and
    ``0.5 * (1 - bias)`` for the rest, so ``bias=0`` makes group and label
    independent and ``bias=1`` leaves no privileged row with the unfavorable
    label.
    """
    if n < 40:
        raise DataError("synthetic datasets need n >= 40")
    if not 0.0 <= bias <= 1.0:
        raise DataError("bias must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    labels = (z.sum(axis=1) > 0).astype(np.int8)
    direction = np.array([1.0, 1.0]) / np.sqrt(2.0)
    x = z + 0.5 * (2 * labels[:, None] - 1) * direction
    p_priv = np.where(labels == 1, 0.5, 0.5 * (1.0 - bias))
    protected = (rng.random(n) < p_priv).astype(np.int8)
    tags = assign_splits(labels, protected, fractions, seed)
    validate_splits(labels, protected, tags)
    train = tags == TRAIN
    mean, std = x[train].mean(axis=0), x[train].std(axis=0, ddof=1)
    specs = tuple(FeatureSpec(f"x{i}", "numeric", mean=float(mean[i]), std=float(std[i])) for i in range(2))
    return Dataset((x - mean) / std, labels, protected, tags, specs, name=f"synthetic-b{bias:g}")

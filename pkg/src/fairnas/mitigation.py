"""Pre-processing bias mitigation stages: Reweighing and Disparate Impact Remover.

Both stages are fitted on the train split only and then applied unchanged to
every split. Reweighing attaches per-row sample weights
``w(s, y) = P(s) P(y) / P(s, y)``. The Disparate Impact Remover moves every
numeric feature, within each group, toward the median of the group quantile
functions while preserving within-group ranks::

    x' = (1 - lam) * x + lam * Q_target(F_group(x))

Categorical (one-hot) features pass through unchanged.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import TRAIN, Dataset

REWEIGH, DIR_REPAIR = "reweigh", "dir-repair"


class StageError(ValueError):
    pass


@dataclass(frozen=True)
class QuantileMap:
    """Piecewise-linear empirical CDF of one group on one feature.

    Knots are the unique sorted values; a value repeated ``c`` times with
    ``b`` values below it sits at the mid-rank level ``(b + c / 2) / n``.
    """

    values: np.ndarray
    levels: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "QuantileMap":
        values, counts = np.unique(x, return_counts=True)
        below = np.concatenate([[0], np.cumsum(counts)[:-1]])
        return cls(values, (below + counts / 2.0) / len(x))

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.values, self.levels)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return np.interp(u, self.levels, self.values)


@dataclass(frozen=True)
class PipelineStage:
    kind: str
    repair_level: float = 1.0
    weights: dict = field(default_factory=dict)
    columns: tuple[int, ...] = ()
    maps: dict = field(default_factory=dict)
    width: int = 0

    def __post_init__(self):
        if self.kind not in (REWEIGH, DIR_REPAIR):
            raise StageError(f"unknown stage kind {self.kind!r}")
        if not 0.0 <= self.repair_level <= 1.0:
            raise StageError("repair_level must lie in [0, 1]")

    @property
    def fitted(self) -> bool:
        return bool(self.weights) if self.kind == REWEIGH else self.width > 0

    def descriptor(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == DIR_REPAIR:
            d["repair_level"] = self.repair_level
        return d

    def key(self) -> str:
        return descriptor_key(self.descriptor())


def descriptor_key(descriptor: dict | None) -> str:
    """Short stable hash of a pipeline descriptor; ``none`` for no stage."""
    if not descriptor:
        return "none"
    payload = json.dumps(descriptor, sort_keys=True)
    return hashlib.blake2b(payload.encode(), digest_size=6).hexdigest()


def fit_reweigh(dataset: Dataset) -> PipelineStage:
    _, y, s, _ = dataset.part(TRAIN)
    n = len(y)
    weights = {}
    for g in (0, 1):
        for lab in (0, 1):
            cell = int(np.sum((s == g) & (y == lab)))
            if cell == 0:
                raise StageError(f"empty train cell (protected={g}, label={lab})")
            weights[(g, lab)] = (np.sum(s == g) / n) * (np.sum(y == lab) / n) / (cell / n)
    return PipelineStage(REWEIGH, weights=weights, width=dataset.width)


def fit_dir(dataset: Dataset, repair_level: float = 1.0) -> PipelineStage:
    if not 0.0 <= repair_level <= 1.0:
        raise StageError("repair_level must lie in [0, 1]")
    x, _, s, _ = dataset.part(TRAIN)
    for g in (0, 1):
        if np.sum(s == g) < 2:
            raise StageError(f"group {g} has fewer than 2 train rows")
    columns = []
    start = 0
    for spec in dataset.specs:
        if spec.kind == "numeric":
            columns.append(start)
        start += spec.width
    maps = {}
    for j in columns:
        maps[j] = {g: QuantileMap.fit(x[s == g, j]) for g in (0, 1)}
    return PipelineStage(DIR_REPAIR, repair_level=float(repair_level), columns=tuple(columns), maps=maps, width=dataset.width)


def _target_quantile(group_maps: dict, u: np.ndarray) -> np.ndarray:
    return np.median(np.stack([m.quantile(u) for m in group_maps.values()]), axis=0)


def repair(stage: PipelineStage, features: np.ndarray, protected: np.ndarray) -> np.ndarray:
    """DIR transform of a raw feature matrix."""
    out = np.array(features, dtype=np.float64, copy=True)
    lam = stage.repair_level
    if lam == 0.0:
        return out
    for j in stage.columns:
        group_maps = stage.maps[j]
        for g, gmap in group_maps.items():
            rows = protected == g
            if not rows.any():
                continue
            col = out[rows, j]
            target = _target_quantile(group_maps, gmap.cdf(col))
            out[rows, j] = (1.0 - lam) * col + lam * target
    return out


def apply(stage: PipelineStage, dataset: Dataset) -> Dataset:
    """Transform every split with the train-fitted state; labels and groups stay as they are."""
    if not stage.fitted:
        raise StageError("stage has not been fitted")
    if stage.width != dataset.width:
        raise StageError(f"stage fitted on width {stage.width}, dataset has width {dataset.width}")
    if stage.kind == REWEIGH:
        w = np.array([stage.weights[(int(g), int(y))] for g, y in zip(dataset.protected, dataset.labels)])
        return dataset.with_weights(w)
    return dataset.with_features(repair(stage, dataset.features, dataset.protected))


def fit(descriptor: dict, dataset: Dataset) -> PipelineStage:
    """Fit a stage from its descriptor (``{"kind": ..., "repair_level": ...}``)."""
    kind = descriptor.get("kind")
    if kind == REWEIGH:
        return fit_reweigh(dataset)
    if kind == DIR_REPAIR:
        return fit_dir(dataset, float(descriptor.get("repair_level", 1.0)))
    raise StageError(f"unknown stage kind {kind!r}")

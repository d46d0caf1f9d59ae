"""Budgeted trial evaluation with checkpoint resume, result caching and a run log.

A trial is ``(configuration, budget in epochs, seed, pipeline)``. Training
resumes from the largest stored checkpoint at a lower budget, so evaluating a
configuration at 3 and then at 10 epochs trains 3 + 7 epochs and ends in
exactly the state of a single 10-epoch run.
"""

from __future__ import annotations

import json
import logging
import math
import os
import shutil
import tempfile
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import mitigation
from .data import TEST, TRAIN, VAL, Dataset
from .metrics import MetricVector, metrics
from .space import Configuration, SearchSpace, sample
from .zoo import DivergedError, ModelState, TrainSettings, build, predict, train_epochs
from .zoo.training import MAX_EPOCHS

logger = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = 1
OK, DIVERGED = "ok", "diverged"
WORST = 1.0
PREPARED_MEMO = 4


class TrialFailure(RuntimeError):
    """A trial kept failing for reasons other than divergence."""

OBJECTIVES = {
    "error": lambda m: 1.0 - m.balanced_accuracy,
    "std_error": lambda m: 1.0 - m.accuracy,
    "abs_spd": lambda m: abs(m.statistical_parity_difference),
    "abs_aod": lambda m: abs(m.average_odds_difference),
    "abs_eod": lambda m: abs(m.equal_opportunity_difference),
    "abs_one_minus_di": lambda m: abs(1.0 - m.disparate_impact),
}


def objective_value(m: MetricVector, name: str, status: str = OK) -> float:
    """Minimized objective; undefined metrics and diverged trials count as 1.0."""
    if status != OK:
        return WORST
    value = OBJECTIVES[name](m)
    return WORST if math.isnan(value) else min(float(value), WORST)


@dataclass(frozen=True)
class TrialRequest:
    config: Configuration
    budget: int
    seed: int = 0
    objective_split: str = VAL
    pipeline: dict | None = None

    def __post_init__(self):
        if not 1 <= self.budget <= MAX_EPOCHS:
            raise ValueError(f"budget must lie in [1, {MAX_EPOCHS}] epochs")
        if self.objective_split not in (VAL, TEST):
            raise ValueError("objective_split must be 'val' or 'test'")

    @property
    def pipeline_key(self) -> str:
        return mitigation.descriptor_key(self.pipeline)


@dataclass
class TrialRecord:
    trial_id: int
    config: Configuration
    budget: int
    seed: int
    objective_split: str
    pipeline: dict | None
    metrics: MetricVector
    train_metrics: MetricVector
    wall_time: float
    status: str
    checkpoint: str
    resumed_from: int = 0
    cached: bool = False

    @property
    def pipeline_key(self) -> str:
        return mitigation.descriptor_key(self.pipeline)

    def objective(self, name: str) -> float:
        return objective_value(self.metrics, name, self.status)

    @property
    def trivial(self) -> bool:
        """Predicts a single class on the objective split."""
        return self.status == OK and self.metrics.selection_rate in (0.0, 1.0)

    def to_json(self) -> dict:
        return {
            "schema_version": LOG_SCHEMA_VERSION,
            "trial_id": self.trial_id,
            "config_key": self.config.key,
            "config": self.config.to_dict(),
            "budget": self.budget,
            "seed": self.seed,
            "objective_split": self.objective_split,
            "pipeline": self.pipeline,
            "pipeline_key": self.pipeline_key,
            "metrics": self.metrics.to_dict(),
            "train_metrics": self.train_metrics.to_dict(),
            "wall_time": self.wall_time,
            "status": self.status,
            "checkpoint": self.checkpoint,
            "resumed_from": self.resumed_from,
            "cached": self.cached,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrialRecord":
        if d.get("schema_version") != LOG_SCHEMA_VERSION:
            raise ValueError(f"unsupported run-log schema {d.get('schema_version')!r}")
        return cls(
            trial_id=d["trial_id"],
            config=Configuration.from_dict(d["config"]),
            budget=d["budget"],
            seed=d["seed"],
            objective_split=d["objective_split"],
            pipeline=d["pipeline"],
            metrics=MetricVector.from_dict(d["metrics"]),
            train_metrics=MetricVector.from_dict(d["train_metrics"]),
            wall_time=d["wall_time"],
            status=d["status"],
            checkpoint=d["checkpoint"],
            resumed_from=d.get("resumed_from", 0),
            cached=d.get("cached", False),
        )


def read_log(path: str | Path) -> list[TrialRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [TrialRecord.from_json(json.loads(line)) for line in fh if line.strip()]


class CheckpointStore:
    """Directory of model states keyed by (config, seed, pipeline, dataset, budget)."""

    def __init__(self, root: str | Path | None = None):
        self._owned = root is None
        self.root = Path(tempfile.mkdtemp(prefix="fairnas-ckpt-")) if root is None else Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def stem(config_key: str, seed: int, pipeline_key: str, dataset_key: str) -> str:
        return f"{config_key}-s{seed}-p{pipeline_key}-d{dataset_key}"

    def path(self, stem: str, budget: int) -> Path:
        return self.root / f"{stem}-b{budget:02d}.npz"

    def budgets(self, stem: str) -> list[int]:
        return sorted(int(p.stem.rsplit("-b", 1)[1]) for p in self.root.glob(f"{stem}-b*.npz"))

    def save(self, stem: str, state: ModelState) -> str:
        path = self.path(stem, state.epoch_counter)
        tmp = path.with_suffix(".tmp")
        state.save(tmp)
        os.replace(tmp, path)
        return path.name

    def load(self, stem: str, budget: int) -> ModelState:
        return ModelState.load(self.path(stem, budget))

    def discard(self, stem: str, budget: int | None = None) -> None:
        for b in self.budgets(stem):
            if budget is None or b == budget:
                self.path(stem, b).unlink(missing_ok=True)

    def close(self) -> None:
        if self._owned:
            shutil.rmtree(self.root, ignore_errors=True)


class TrialEvaluator:
    """Turns :class:`TrialRequest` objects into :class:`TrialRecord` objects for one dataset.

    Args:
        dataset: encoded dataset with train and val (and optionally test) rows.
        checkpoint_dir: where intermediate states go; a temporary directory by default.
        log_path: JSON-lines run log, appended to on every call.
        cache: reuse metrics of identical trials instead of retraining.
        cache_path: JSON-lines file persisting the cache across processes.
        dtype: training precision (float64 unless speed forces float32).
        retries: extra attempts after an unexpected training error.
    """

    def __init__(
        self,
        dataset: Dataset,
        checkpoint_dir: str | Path | None = None,
        log_path: str | Path | None = None,
        cache: bool = True,
        cache_path: str | Path | None = None,
        dtype=np.float64,
        retries: int = 1,
    ):
        self.dataset = dataset
        self.retries = retries
        self.store = CheckpointStore(checkpoint_dir)
        self.log_path = Path(log_path) if log_path else None
        self.cache_enabled = cache
        self.cache_path = Path(cache_path) if cache_path else None
        self.dtype = np.dtype(dtype)
        self.records: list[TrialRecord] = []
        self._cache: dict[tuple, dict] = {}
        self._prepared: OrderedDict[str, Dataset] = OrderedDict()
        if self.cache_path and self.cache_path.exists() and cache:
            with self.cache_path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._cache[tuple(entry["key"])] = entry["value"]

    # ------------------------------------------------------------------ helpers

    def prepared(self, pipeline: dict | None) -> Dataset:
        """The dataset after the (train-fitted) pipeline stage; the last few descriptors are memoized."""
        key = mitigation.descriptor_key(pipeline)
        if key in self._prepared:
            self._prepared.move_to_end(key)
        else:
            if not pipeline:
                self._prepared[key] = self.dataset
            else:
                stage = mitigation.fit(pipeline, self.dataset)
                self._prepared[key] = mitigation.apply(stage, self.dataset)
            while len(self._prepared) > PREPARED_MEMO:
                self._prepared.popitem(last=False)
        return self._prepared[key]

    def _stem(self, request: TrialRequest) -> str:
        return CheckpointStore.stem(
            request.config.key, request.seed, request.pipeline_key, self.dataset.fingerprint()[:8] + self.dtype.char
        )

    def _cache_key(self, request: TrialRequest) -> tuple:
        return (self._stem(request), request.budget, request.objective_split)

    def _split_metrics(self, model: ModelState, data: Dataset, split: str) -> MetricVector:
        x, y, s, _ = data.part(split)
        return metrics(predict(model, x), y, s)

    # ------------------------------------------------------------------ training

    def _train(self, request: TrialRequest) -> dict:
        t0 = time.perf_counter()
        data = self.prepared(request.pipeline)
        stem = self._stem(request)
        state, start = None, 0
        for b in reversed(self.store.budgets(stem)):
            if b <= request.budget:
                try:
                    state, start = self.store.load(stem, b), b
                except Exception as exc:  # noqa: BLE001 - any unreadable checkpoint is retrained
                    logger.warning("discarding unreadable checkpoint %s at budget %d: %s", stem, b, exc)
                    self.store.discard(stem, b)
                    continue
                break
        if state is None:
            state = build(request.config, data.width, request.seed, blocks=data.blocks, dtype=self.dtype)
        settings = TrainSettings.from_config(request.config, seed=request.seed)
        ckpt = ""
        try:
            if request.budget > state.epoch_counter:
                train_epochs(state, data, settings, request.budget - state.epoch_counter)
            for arr in state.params.values():
                if not np.all(np.isfinite(arr)):
                    raise DivergedError(state.epoch_counter, state.step)
        except DivergedError as exc:
            logger.info("trial %s diverged: %s", request.config.key, exc)
            worst = MetricVector.worst_case().to_dict()
            return {"status": DIVERGED, "metrics": worst, "train_metrics": worst, "test_metrics": worst,
                    "checkpoint": "", "resumed_from": start, "train_seconds": time.perf_counter() - t0}
        if request.budget < MAX_EPOCHS:
            ckpt = self.store.save(stem, state)
        out = {
            "status": OK,
            "metrics": self._split_metrics(state, data, request.objective_split).to_dict(),
            "train_metrics": self._split_metrics(state, data, TRAIN).to_dict(),
            "checkpoint": ckpt,
            "resumed_from": start,
        }
        # test metrics are kept aside for final reporting and never returned to the optimizer
        if request.objective_split == VAL and (data.split == TEST).any():
            out["test_metrics"] = self._split_metrics(state, data, TEST).to_dict()
        out["train_seconds"] = time.perf_counter() - t0
        return out

    def _finish(self, request: TrialRequest, result: dict, wall: float, cached: bool) -> TrialRecord:
        record = TrialRecord(
            trial_id=len(self.records),
            config=request.config,
            budget=request.budget,
            seed=request.seed,
            objective_split=request.objective_split,
            pipeline=request.pipeline,
            metrics=MetricVector.from_dict(result["metrics"]),
            train_metrics=MetricVector.from_dict(result["train_metrics"]),
            wall_time=wall,
            status=result["status"],
            checkpoint=result["checkpoint"],
            resumed_from=result["resumed_from"],
            cached=cached,
        )
        self.records.append(record)
        if self.log_path:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_json()) + "\n")
        return record

    def _remember(self, request: TrialRequest, result: dict) -> None:
        if not self.cache_enabled:
            return
        key = self._cache_key(request)
        self._cache[key] = result
        if self.cache_path:
            self.cache_path.parent.mkdir(parents=True, exist_ok=True)
            with self.cache_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": list(key), "value": result}) + "\n")

    def evaluate(self, request: TrialRequest) -> TrialRecord:
        """Train (or resume) to ``request.budget`` epochs and score the objective split."""
        if not (self.dataset.split == request.objective_split).any():
            raise ValueError(f"dataset has no {request.objective_split!r} rows")
        t0 = time.perf_counter()
        key = self._cache_key(request)
        if self.cache_enabled and key in self._cache:
            return self._finish(request, self._cache[key], time.perf_counter() - t0, cached=True)
        result = self._attempt(request)
        self._remember(request, result)
        return self._finish(request, result, time.perf_counter() - t0, cached=False)

    def _attempt(self, request: TrialRequest) -> dict:
        for attempt in range(self.retries + 1):
            try:
                return self._train(request)
            except (MemoryError, OSError, FloatingPointError, RuntimeError) as exc:
                logger.warning("trial %s failed (attempt %d): %s", request.config.key, attempt + 1, exc)
                error = exc
        raise TrialFailure(f"trial {request.config.key} at budget {request.budget} failed: {error}") from error

    def evaluate_many(self, requests: Sequence[TrialRequest], workers: int = 1) -> list[TrialRecord]:
        """Evaluate several requests; with ``workers > 1`` uncached ones run in a process pool.

        Records are appended in request order regardless of completion order.
        """
        if workers <= 1 or len(requests) <= 1:
            return [self.evaluate(r) for r in requests]
        pending = [r for r in requests if not (self.cache_enabled and self._cache_key(r) in self._cache)]
        results: dict[int, tuple[dict, float]] = {}
        if pending:
            with ProcessPoolExecutor(
                max_workers=workers,
                initializer=_worker_init,
                initargs=(self.dataset, str(self.store.root), self.dtype.str),
            ) as pool:
                for req, out in zip(pending, pool.map(_worker_run, pending)):
                    results[id(req)] = out
        records = []
        for r in requests:
            if id(r) in results:
                result, wall = results[id(r)]
                self._remember(r, result)
                records.append(self._finish(r, result, wall, cached=False))
            else:
                records.append(self.evaluate(r))
        return records

    def test_metrics(self, record: TrialRecord) -> MetricVector:
        """Test-split metrics of a finished validation-scored trial (for reporting only)."""
        if record.status != OK:
            return MetricVector.worst_case()
        request = TrialRequest(record.config, record.budget, record.seed, VAL, record.pipeline)
        entry = self._cache.get(self._cache_key(request))
        if entry is None or "test_metrics" not in entry:
            entry = self._train(request)
            self._remember(request, entry)
        return MetricVector.from_dict(entry["test_metrics"])

    def compute_seconds(self, record: TrialRecord) -> float:
        """Seconds the trial originally took to train, even when ``record`` was replayed from the cache."""
        request = TrialRequest(record.config, record.budget, record.seed, record.objective_split, record.pipeline)
        entry = self._cache.get(self._cache_key(request))
        if entry is not None and "train_seconds" in entry:
            return float(entry["train_seconds"])
        return record.wall_time

    def release(self, config: Configuration, seed: int, pipeline: dict | None = None) -> None:
        """Drop every stored checkpoint of one (config, seed, pipeline)."""
        self.store.discard(self._stem(TrialRequest(config, 1, seed, VAL, pipeline)))

    def close(self) -> None:
        self.store.close()


_WORKER: dict = {}


def _worker_init(dataset: Dataset, root: str, dtype: str) -> None:
    _WORKER["evaluator"] = TrialEvaluator(dataset, checkpoint_dir=root, cache=False, dtype=np.dtype(dtype))


def _worker_run(request: TrialRequest) -> tuple[dict, float]:
    t0 = time.perf_counter()
    out = _WORKER["evaluator"]._train(request)
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------- probing


PROBE_METRICS = ("accuracy", "balanced_accuracy", "abs_spd", "abs_aod", "abs_eod", "disparate_impact")


def _probe_value(m: MetricVector, name: str) -> float:
    if name.startswith("abs_"):
        return OBJECTIVES[name](m)
    return getattr(m, name)


@dataclass
class ConfigSummary:
    config: Configuration
    n_seeds: int
    mean: dict[str, float]
    std: dict[str, float]
    trivial_fraction: float

    def to_json(self) -> dict:
        return {
            "config_key": self.config.key,
            "config": self.config.to_dict(),
            "n_seeds": self.n_seeds,
            "mean": self.mean,
            "std": self.std,
            "trivial_fraction": self.trivial_fraction,
        }


@dataclass
class ProbeResult:
    records: list[TrialRecord]
    summaries: list[ConfigSummary]
    trivial_rate: float
    trivial_record_rate: float
    extra: dict = field(default_factory=dict)

    def across_configs(self, name: str) -> np.ndarray:
        return np.array([s.mean[name] for s in self.summaries])

    def summary(self) -> dict:
        out = {
            "n_configs": len(self.summaries),
            "n_records": len(self.records),
            "trivial_rate": self.trivial_rate,
            "trivial_record_rate": self.trivial_record_rate,
            "metrics": {},
        }
        for name in PROBE_METRICS:
            v = self.across_configs(name)
            v = v[np.isfinite(v)]
            if len(v) == 0:
                continue
            out["metrics"][name] = {
                "std_over_configs": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                "mean": float(np.mean(v)),
                "min": float(np.min(v)),
                "max": float(np.max(v)),
                "spread": float(np.max(v) - np.min(v)),
            }
        return out


def _summary(recs: list[TrialRecord]) -> ConfigSummary:
    ok = [r for r in recs if r.status == OK]
    mean, std = {}, {}
    for name in PROBE_METRICS:
        v = np.array([_probe_value(r.metrics, name) for r in ok], dtype=float)
        v = v[np.isfinite(v)]
        mean[name] = float(v.mean()) if len(v) else float("nan")
        std[name] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return ConfigSummary(
        config=recs[0].config,
        n_seeds=len(recs),
        mean=mean,
        std=std,
        trivial_fraction=float(np.mean([r.trivial for r in recs])),
    )


def summarize(records: Iterable[TrialRecord]) -> list[ConfigSummary]:
    """Seed-averaged summaries, one per distinct configuration."""
    groups: dict[str, list[TrialRecord]] = {}
    for r in records:
        groups.setdefault(r.config.key, []).append(r)
    return [_summary(recs) for recs in groups.values()]


def probe(
    sp: SearchSpace,
    n_configs: int,
    seeds: Sequence[int],
    evaluator: TrialEvaluator,
    sample_seed: int = 0,
    budget: int = MAX_EPOCHS,
    configs: Sequence[Configuration] | None = None,
    pipeline: dict | None = None,
    workers: int = 1,
    progress=None,
) -> ProbeResult:
    """Sample ``n_configs`` configurations and train each one to full budget for every seed.

    A configuration counts as trivial when at least half of its seeds predict a
    single class on the validation split.
    """
    if n_configs < 1 or not seeds:
        raise ValueError("need n_configs >= 1 and at least one seed")
    if configs is None:
        rng = np.random.default_rng(sample_seed)
        configs = [sample(sp, rng) for _ in range(n_configs)]
    else:
        configs = list(configs)[:n_configs]
    records: list[TrialRecord] = []
    summaries: list[ConfigSummary] = []
    for i, config in enumerate(configs):
        requests = [TrialRequest(config, budget, seed, VAL, pipeline) for seed in seeds]
        batch = evaluator.evaluate_many(requests, workers=workers)
        records.extend(batch)
        # one summary per sampled slot, even if two slots drew the same configuration
        summaries.append(_summary(batch))
        if progress:
            progress(i + 1, len(configs))
    return ProbeResult(
        records=records,
        summaries=summaries,
        trivial_rate=float(np.mean([s.trivial_fraction >= 0.5 for s in summaries])),
        trivial_record_rate=float(np.mean([r.trivial for r in records])),
    )

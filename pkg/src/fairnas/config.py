"""Run configuration: one YAML/JSON document describing a probe, optimization or comparison."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import mitigation
from .data import DEFAULT_FRACTIONS, Dataset, Schema, bundled_schema, load_csv, subsample, synthetic
from .moo import HyperbandConfig, ObjectiveSpec, ScalarizationConfig
from .seeding import derive_seed
from .space import FAMILIES, SearchSpace, space

DTYPES = ("float64", "float32")


class ConfigError(ValueError):
    """The run configuration is invalid; raised before any training starts."""


@dataclass
class DataConfig:
    """Where rows come from. ``path`` is a CSV file or ``synthetic``."""

    path: str
    schema: str | None = None
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    split_seed: int = 0
    max_rows: dict[str, int] | None = None
    synthetic_rows: int = 2000
    synthetic_bias: float = 0.8

    def validate(self, base: Path) -> None:
        if self.path == "synthetic":
            return
        if not self._resolve(self.path, base).is_file():
            raise ConfigError(f"dataset file not found: {self.path}")
        if self.schema is None:
            raise ConfigError("a CSV dataset needs a schema (file path or bundled name)")
        if not self._schema_is_bundled() and not self._resolve(self.schema, base).is_file():
            raise ConfigError(f"schema file not found: {self.schema}")

    @staticmethod
    def _resolve(p: str, base: Path) -> Path:
        path = Path(p).expanduser()
        return path if path.is_absolute() else base / path

    def _schema_is_bundled(self) -> bool:
        try:
            bundled_schema(self.schema)
        except (FileNotFoundError, ModuleNotFoundError, ValueError, OSError):
            return False
        return True

    def load(self, base: Path = Path(".")) -> Dataset:
        self.validate(base)
        if self.path == "synthetic":
            ds = synthetic(self.synthetic_rows, self.synthetic_bias, seed=self.split_seed)
        else:
            schema = (
                bundled_schema(self.schema)
                if self._schema_is_bundled()
                else Schema.from_file(self._resolve(self.schema, base))
            )
            ds = load_csv(self._resolve(self.path, base), schema, self.fractions, seed=self.split_seed)
        if self.max_rows:
            ds = subsample(ds, self.max_rows, seed=self.split_seed)
        return ds


@dataclass
class ProbeConfig:
    n_configs: int = 100
    seeds: list[int] = field(default_factory=lambda: list(range(6)))
    fairness: str = "abs_spd"


@dataclass
class RunConfig:
    data: DataConfig
    family: str = "ResNet"
    objectives: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    scalarization: ScalarizationConfig | None = None
    hyperband: HyperbandConfig = field(default_factory=HyperbandConfig)
    trial_budget: int = 200
    single_trial_budget: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    pipeline: dict | None = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output_dir: str = "runs"
    root_seed: int = 0
    dtype: str = "float64"
    workers: int = 1
    checkpoint_dir: str | None = None
    cache_path: str | None = None
    space_overrides: dict | None = None
    base_dir: str = "."

    def __post_init__(self):
        if self.scalarization is None:
            self.scalarization = ScalarizationConfig(seed=derive_seed(self.root_seed, "scalarization"))

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def search_space(self) -> SearchSpace:
        return space(self.family, self.space_overrides)

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")
        if self.trial_budget < 1:
            raise ConfigError("trial_budget must be >= 1")
        if self.single_trial_budget is not None and self.single_trial_budget != self.trial_budget:
            raise ConfigError(
                f"single-objective budget {self.single_trial_budget} differs from multi-objective budget "
                f"{self.trial_budget}; comparisons need equal budgets"
            )
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.probe.n_configs < 1 or not self.probe.seeds:
            raise ConfigError("probe needs n_configs >= 1 and at least one seed")
        if self.pipeline is not None:
            if self.pipeline.get("kind") not in (mitigation.REWEIGH, mitigation.DIR_REPAIR):
                raise ConfigError(f"unknown pipeline stage {self.pipeline!r}")
            level = self.pipeline.get("repair_level", 1.0)
            if level != "search" and not (isinstance(level, (int, float)) and 0.0 <= level <= 1.0):
                raise ConfigError("repair_level must be a number in [0, 1] or 'search'")
        try:
            self.search_space()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.data.validate(Path(self.base_dir))

    def load_dataset(self) -> Dataset:
        return self.data.load(Path(self.base_dir))

    # ------------------------------------------------------------ (de)serialization

    def to_dict(self) -> dict:
        d = {
            "data": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.data).items()},
            "family": self.family,
            "objectives": {"performance": self.objectives.performance, "fairness": self.objectives.fairness},
            "scalarization": {
                "strategy": self.scalarization.strategy,
                "weights": None if self.scalarization.weights is None else list(self.scalarization.weights),
                "seed": self.scalarization.seed,
                "rho": self.scalarization.rho,
            },
            "hyperband": asdict(self.hyperband),
            "trial_budget": self.trial_budget,
            "single_trial_budget": self.single_trial_budget,
            "seeds": list(self.seeds),
            "pipeline": self.pipeline,
            "probe": asdict(self.probe),
            "output_dir": self.output_dir,
            "root_seed": self.root_seed,
            "dtype": self.dtype,
            "workers": self.workers,
            "checkpoint_dir": self.checkpoint_dir,
            "cache_path": self.cache_path,
            "space_overrides": self.space_overrides,
        }
        return d

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path = ".") -> "RunConfig":
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__} - {"base_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        if "data" not in raw:
            raise ConfigError("run config needs a 'data' section")
        try:
            data = dict(raw.pop("data"))
            if "fractions" in data:
                data["fractions"] = tuple(data["fractions"])
            kwargs: dict[str, Any] = {"data": DataConfig(**data), "base_dir": str(base_dir)}
            if "objectives" in raw:
                kwargs["objectives"] = ObjectiveSpec(**raw.pop("objectives"))
            if raw.get("scalarization") is not None:
                sc = dict(raw.pop("scalarization"))
                if sc.get("weights") is not None:
                    sc["weights"] = tuple(sc["weights"])
                kwargs["scalarization"] = ScalarizationConfig(**sc)
            else:
                raw.pop("scalarization", None)
            if "hyperband" in raw:
                kwargs["hyperband"] = HyperbandConfig(**raw.pop("hyperband"))
            if "probe" in raw:
                kwargs["probe"] = ProbeConfig(**raw.pop("probe"))
            kwargs.update(raw)
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"run config not found: {path}")
        with path.open(encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) if path.suffix in (".yaml", ".yml") else json.load(fh)
        if not isinstance(raw, Mapping):
            raise ConfigError("run config must be a mapping")
        return cls.from_dict(raw, base_dir=path.parent)

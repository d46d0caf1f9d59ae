"""Configuration spaces for the MLP, ResNet and FT-Transformer families.

Each space mixes shared training hyperparameters (continuous, infinite) with
family-specific architectural hyperparameters drawn from finite value sets.
The value sets are one factorization that reproduces the published
architecture counts: 875 (MLP), 350 (ResNet) and 324 (FT-Transformer).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

import numpy as np

FAMILIES = ("MLP", "ResNet", "FTTransformer")
KINDS = ("continuous-log", "continuous-linear", "integer-set", "categorical-set")
WIDTHS = (16, 32, 64, 128, 256, 512, 1024)
MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    values: tuple = ()
    default: Any = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind.startswith("continuous"):
            if self.low is None or self.high is None or not self.low < self.high:
                raise SpaceError(f"{self.name}: need low < high")
            if self.kind == "continuous-log" and self.low <= 0:
                raise SpaceError(f"{self.name}: log domain needs a positive lower bound")
        else:
            if not self.values or len(set(self.values)) != len(self.values):
                raise SpaceError(f"{self.name}: value set must be nonempty and duplicate-free")
        if self.default is not None and not self.contains(self.default):
            raise SpaceError(f"{self.name}: default {self.default!r} outside the domain")

    @property
    def is_discrete(self) -> bool:
        return not self.kind.startswith("continuous")

    def contains(self, value) -> bool:
        if self.is_discrete:
            return value in self.values
        try:
            return self.low <= float(value) <= self.high
        except (TypeError, ValueError):
            return False

    def sample(self, rng: np.random.Generator):
        if self.kind == "continuous-log":
            return float(10 ** rng.uniform(math.log10(self.low), math.log10(self.high)))
        if self.kind == "continuous-linear":
            return float(rng.uniform(self.low, self.high))
        return self.values[int(rng.integers(len(self.values)))]

    def to_unit(self, value) -> float:
        """Map a value to [0, 1]: log10 / linear scaling, or the (scaled) set index or integer."""
        if self.kind == "continuous-log":
            lo, hi = math.log10(self.low), math.log10(self.high)
            return (math.log10(value) - lo) / (hi - lo)
        if self.kind == "continuous-linear":
            return (float(value) - self.low) / (self.high - self.low)
        if len(self.values) == 1:
            return 0.0
        if self.kind == "integer-set":
            lo, hi = min(self.values), max(self.values)
            return (value - lo) / (hi - lo)
        return self.values.index(value) / (len(self.values) - 1)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_discrete:
            d["values"] = list(self.values)
        else:
            d["low"], d["high"] = self.low, self.high
        if self.default is not None:
            d["default"] = self.default
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Domain":
        return cls(
            name=d["name"],
            kind=d["kind"],
            low=d.get("low"),
            high=d.get("high"),
            values=tuple(d.get("values", ())),
            default=d.get("default"),
        )


@dataclass(frozen=True)
class Configuration:
    family: str
    values: tuple[tuple[str, Any], ...]
    _hash: list = field(default_factory=list, repr=False, compare=False)

    def __getitem__(self, name: str):
        for k, v in self.values:
            if k == name:
                return v
        raise KeyError(name)

    def get(self, name: str, default=None):
        try:
            return self[name]
        except KeyError:
            return default

    def as_dict(self) -> dict:
        return dict(self.values)

    def replace(self, **updates) -> "Configuration":
        unknown = set(updates) - {k for k, _ in self.values}
        if unknown:
            raise KeyError(f"unknown hyperparameters {sorted(unknown)}")
        return Configuration(self.family, tuple((k, updates.get(k, v)) for k, v in self.values))

    @property
    def key(self) -> str:
        """Stable 64-bit content hash as 16 hex digits."""
        if not self._hash:
            payload = json.dumps([self.family, [[k, _canon(v)] for k, v in self.values]], separators=(",", ":"))
            self._hash.append(hashlib.blake2b(payload.encode(), digest_size=8).hexdigest())
        return self._hash[0]

    @property
    def hash64(self) -> int:
        return int(self.key, 16)

    def to_dict(self) -> dict:
        return {"family": self.family, "values": dict(self.values)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Configuration":
        return cls(d["family"], tuple(d["values"].items()))


def _canon(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class SearchSpace:
    family: str
    domains: tuple[Domain, ...]
    architectural: tuple[str, ...]

    def __post_init__(self):
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate hyperparameter names")
        missing = set(self.architectural) - set(names)
        if missing:
            raise SpaceError(f"architectural names not in space: {sorted(missing)}")
        for name in self.architectural:
            if not self.domain(name).is_discrete:
                raise SpaceError(f"architectural hyperparameter {name!r} must be a finite set")

    def domain(self, name: str) -> Domain:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    def validate(self, config: Configuration) -> None:
        if config.family != self.family:
            raise SpaceError(f"configuration family {config.family!r} does not match space {self.family!r}")
        if [k for k, _ in config.values] != self.names:
            raise SpaceError("configuration hyperparameters do not match the space")
        for d in self.domains:
            if not d.contains(config[d.name]):
                raise SpaceError(f"{d.name}={config[d.name]!r} outside its domain")

    def default(self) -> Configuration:
        return Configuration(self.family, tuple((d.name, d.default) for d in self.domains))

    def encode(self, configs) -> np.ndarray:
        """Unit-cube encoding used as surrogate input, one row per configuration."""
        return np.array([[d.to_unit(c[d.name]) for d in self.domains] for c in configs], dtype=float).reshape(
            -1, len(self.domains)
        )

    def architectures(self) -> Iterator[dict]:
        """Every combination of the architectural value sets."""
        sets = [self.domain(n).values for n in self.architectural]
        for combo in itertools.product(*sets):
            yield dict(zip(self.architectural, combo))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "architectural": list(self.architectural),
            "domains": [d.to_dict() for d in self.domains],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SearchSpace":
        return cls(
            family=d["family"],
            domains=tuple(Domain.from_dict(x) for x in d["domains"]),
            architectural=tuple(d["architectural"]),
        )


def _training_domains() -> list[Domain]:
    return [
        Domain("learning_rate", "continuous-log", 1e-5, 1e-2, default=1e-3),
        Domain("weight_decay", "continuous-log", 1e-6, 1e-3, default=1e-5),
        Domain("dropout", "continuous-linear", 0.0, 0.5, default=0.1),
        Domain("batch_size", "categorical-set", values=(64, 128, 256, 512), default=256),
    ]


def space(family: str, overrides: Mapping[str, Mapping] | None = None) -> SearchSpace:
    """The fixed search space of ``family``; ``overrides`` replaces domains by name."""
    if family == "MLP":
        arch = [
            Domain("depth", "integer-set", values=(1, 2, 3, 4, 5), default=3),
            Domain("base_width", "integer-set", values=WIDTHS, default=128),
            Domain("first_layer_multiplier", "categorical-set", values=MULTIPLIERS, default=1.0),
            Domain("last_layer_multiplier", "categorical-set", values=MULTIPLIERS, default=1.0),
        ]
    elif family == "ResNet":
        arch = [
            Domain("n_blocks", "integer-set", values=(1, 2, 3, 4, 5), default=2),
            Domain("main_width", "integer-set", values=WIDTHS, default=128),
            Domain("hidden_expansion", "categorical-set", values=(0.5, 1.0, 2.0, 3.0, 4.0), default=2.0),
            Domain("normalization", "categorical-set", values=("batchnorm", "layernorm"), default="batchnorm"),
        ]
    elif family == "FTTransformer":
        arch = [
            Domain("n_blocks", "integer-set", values=(1, 2, 3), default=3),
            Domain("n_heads", "integer-set", values=(1, 2, 4, 8), default=8),
            Domain("token_dim", "integer-set", values=(64, 128, 192), default=192),
            Domain("ffn_expansion", "categorical-set", values=(1.0, 2.0, 4.0), default=2.0),
            Domain("ffn_hidden_layers", "integer-set", values=(1, 2, 3), default=1),
        ]
    else:
        raise SpaceError(f"unknown family {family!r}; expected one of {FAMILIES}")
    domains = arch + _training_domains()
    if overrides:
        by_name = {d.name: d for d in domains}
        for name, spec in overrides.items():
            if name not in by_name:
                raise SpaceError(f"cannot override unknown hyperparameter {name!r}")
            base = by_name[name].to_dict()
            base.update(spec)
            by_name[name] = Domain.from_dict(base)
        domains = [by_name[d.name] for d in domains]
    return SearchSpace(family, tuple(domains), tuple(d.name for d in arch))


def sample(sp: SearchSpace, seed) -> Configuration:
    """Draw one configuration; ``seed`` may be an int or a numpy Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Configuration(sp.family, tuple((d.name, d.sample(rng)) for d in sp.domains))


def cardinality(sp: SearchSpace) -> int:
    """Number of architectural combinations; continuous training domains are excluded."""
    return math.prod(len(sp.domain(n).values) for n in sp.architectural)


def mutate(sp: SearchSpace, config: Configuration, rng: np.random.Generator, scale: float = 0.2) -> Configuration:
    """Change exactly one hyperparameter (a one-field neighbor)."""
    candidates = [d for d in sp.domains if not (d.is_discrete and len(d.values) == 1)]
    d = candidates[int(rng.integers(len(candidates)))]
    old = config[d.name]
    if d.is_discrete:
        others = [v for v in d.values if v != old]
        new = others[int(rng.integers(len(others)))]
    elif d.kind == "continuous-log":
        lo, hi = math.log10(d.low), math.log10(d.high)
        new = 10 ** float(np.clip(math.log10(old) + rng.normal(0, scale * (hi - lo)), lo, hi))
    else:
        new = float(np.clip(old + rng.normal(0, scale * (d.high - d.low)), d.low, d.high))
    return config.replace(**{d.name: new})

"""Objective selection and scalarization of objective vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..evaluator import OK, objective_value
from ..metrics import MetricVector

PERFORMANCE = ("error", "std_error")
FAIRNESS = ("abs_spd", "abs_aod", "abs_eod")
WEIGHTED_MEAN, PAREGO = "weighted-mean", "parego"
WIDEN = 1e-12


@dataclass(frozen=True)
class ObjectiveSpec:
    """A performance objective and optionally one fairness objective, both minimized.

    Disparate impact is deliberately not offered: its ratio blows up when the
    privileged selection rate approaches zero.
    """

    performance: str = "error"
    fairness: str | None = "abs_spd"

    def __post_init__(self):
        if self.performance not in PERFORMANCE:
            raise ValueError(f"performance objective must be one of {PERFORMANCE}, got {self.performance!r}")
        if self.fairness is not None and self.fairness not in FAIRNESS:
            raise ValueError(f"fairness objective must be one of {FAIRNESS}, got {self.fairness!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return (self.performance,) if self.fairness is None else (self.performance, self.fairness)

    @property
    def single(self) -> bool:
        return self.fairness is None

    def vector(self, m: MetricVector, status: str = OK) -> tuple[float, ...]:
        return tuple(objective_value(m, n, status) for n in self.names)


@dataclass(frozen=True)
class ScalarizationConfig:
    strategy: str = PAREGO
    weights: tuple[float, ...] | None = None
    seed: int = 0
    rho: float = 0.05

    def __post_init__(self):
        if self.strategy not in (WEIGHTED_MEAN, PAREGO):
            raise ValueError(f"unknown scalarization {self.strategy!r}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative and sum to 1")
        elif self.strategy == WEIGHTED_MEAN:
            raise ValueError("weighted-mean needs fixed weights")


def bounds(history: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-objective min and max of observed vectors; degenerate ranges widen by 1e-12."""
    h = np.atleast_2d(np.asarray(history, dtype=float))
    lo, hi = h.min(axis=0), h.max(axis=0)
    hi = np.where(hi - lo < WIDEN, lo + WIDEN, hi)
    return lo, hi


def normalize(f, lo, hi) -> np.ndarray:
    return (np.asarray(f, dtype=float) - lo) / (hi - lo)


def scalarize(strategy: str, fhat, weights, rho: float = 0.05) -> np.ndarray | float:
    """Scalar value(s) of normalized objective vector(s) ``fhat`` (last axis = objectives).

    ParEGO: ``max_i(w_i f_i) + rho * sum_i(w_i f_i)``; weighted mean: ``sum_i(w_i f_i)``.
    """
    f = np.asarray(fhat, dtype=float)
    w = np.asarray(weights, dtype=float)
    weighted = f * w
    total = weighted.sum(axis=-1)
    if strategy == WEIGHTED_MEAN:
        out = total
    elif strategy == PAREGO:
        out = weighted.max(axis=-1) + rho * total
    else:
        raise ValueError(f"unknown scalarization {strategy!r}")
    return float(out) if np.ndim(out) == 0 else out


def simplex_weights(rng: np.random.Generator, k: int) -> np.ndarray:
    """Uniform draw from the probability simplex."""
    return rng.dirichlet(np.ones(k))

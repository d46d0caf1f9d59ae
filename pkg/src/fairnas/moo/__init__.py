"""Multi-objective optimization: dominance, archive, scalarization, Hyperband and the BO loop."""

from .hyperband import Bracket, HyperbandConfig, Rung, hyperband_schedule
from .optimizer import BO, RANDOM, ForestSurrogate, OptimizationResult, expected_improvement, optimize
from .pareto import EPS, ArchiveEntry, ParetoArchive, dominates, hypervolume2d, nondominated
from .scalarize import (
    FAIRNESS,
    PAREGO,
    PERFORMANCE,
    WEIGHTED_MEAN,
    ObjectiveSpec,
    ScalarizationConfig,
    bounds,
    normalize,
    scalarize,
    simplex_weights,
)

__all__ = [
    "ArchiveEntry",
    "BO",
    "Bracket",
    "EPS",
    "FAIRNESS",
    "ForestSurrogate",
    "HyperbandConfig",
    "ObjectiveSpec",
    "OptimizationResult",
    "PAREGO",
    "PERFORMANCE",
    "ParetoArchive",
    "RANDOM",
    "Rung",
    "ScalarizationConfig",
    "WEIGHTED_MEAN",
    "bounds",
    "dominates",
    "expected_improvement",
    "hyperband_schedule",
    "hypervolume2d",
    "nondominated",
    "normalize",
    "optimize",
    "scalarize",
    "simplex_weights",
]

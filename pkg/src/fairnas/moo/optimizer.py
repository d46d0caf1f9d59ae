"""Scalarized multi-objective Bayesian optimization with Hyperband intensification.

Each proposal fits a random forest from (encoded configuration, budget) to the
scalarized objective over the whole history and picks the candidate with the
largest expected improvement predicted at the maximum budget. Every fourth
proposal after the initial design is drawn at random instead. Proposals are run
through Hyperband brackets; trials that reach the maximum budget enter the
Pareto archive with their raw objective vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr
from sklearn.ensemble import RandomForestRegressor

from ..data import VAL
from ..evaluator import TrialEvaluator, TrialRecord, TrialRequest
from ..mitigation import DIR_REPAIR
from ..seeding import derive_seed
from ..space import Configuration, Domain, SearchSpace, mutate, sample
from .hyperband import Bracket, HyperbandConfig, Rung, hyperband_schedule
from .pareto import ArchiveEntry, ParetoArchive, hypervolume2d, nondominated
from .scalarize import PAREGO, ObjectiveSpec, ScalarizationConfig, bounds, normalize, scalarize, simplex_weights

BO, RANDOM = "bo", "random"
N_CANDIDATES = 1000
N_NEIGHBORS = 10
INITIAL_DESIGN = 8
RANDOM_EVERY = 4
SEARCHED = "search"
REPAIR_LEVEL = "repair_level"


def searches_repair_level(pipeline: dict | None) -> bool:
    """True for ``{"kind": "dir-repair", "repair_level": "search"}``."""
    return bool(pipeline) and pipeline.get("kind") == DIR_REPAIR and pipeline.get(REPAIR_LEVEL) == SEARCHED


class ForestSurrogate:
    """Random-forest regressor whose per-tree spread serves as predictive uncertainty."""

    def __init__(self, seed: int, n_trees: int = 50, min_leaf: int = 3):
        self.model = RandomForestRegressor(
            n_estimators=n_trees, min_samples_leaf=min_leaf, max_features=5 / 6, random_state=seed % 2**32
        )

    def fit(self, x: np.ndarray, y: np.ndarray) -> "ForestSurrogate":
        self.model.fit(x, y)
        return self

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        per_tree = np.stack([t.predict(x) for t in self.model.estimators_])
        return per_tree.mean(axis=0), per_tree.std(axis=0)


def expected_improvement(mu: np.ndarray, sigma: np.ndarray, best: float) -> np.ndarray:
    """EI for minimization; falls back to ``max(best - mu, 0)`` where ``sigma`` is zero."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    gain = best - mu
    out = np.maximum(gain, 0.0)
    pos = sigma > 0
    z = gain[pos] / sigma[pos]
    out[pos] = gain[pos] * ndtr(z) + sigma[pos] * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return out


@dataclass
class Observation:
    config: Configuration
    budget: int
    vector: tuple[float, ...]
    trial_id: int


@dataclass
class OptimizationResult:
    archive: ParetoArchive
    records: list[TrialRecord]
    objectives: ObjectiveSpec
    trial_budget: int
    seed: int
    proposer: str
    brackets: list[str] = field(default_factory=list)

    @property
    def max_budget(self) -> int:
        return self.archive.max_budget

    def front(self) -> list[TrialRecord]:
        """Archived records, sorted by their objective vectors."""
        return [e.payload for e in self.archive.sorted()]

    def final_records(self) -> list[TrialRecord]:
        return [r for r in self.records if r.budget == self.archive.max_budget]

    def front2d(self, objectives: ObjectiveSpec) -> list[TrialRecord]:
        """Nondominated max-budget records under a (possibly different) objective pair."""
        recs = self.final_records()
        idx = nondominated([objectives.vector(r.metrics, r.status) for r in recs])
        return sorted((recs[i] for i in idx), key=lambda r: objectives.vector(r.metrics, r.status))

    def hypervolume(self, reference=(1.0, 1.0), objectives: ObjectiveSpec | None = None) -> float:
        spec = objectives or self.objectives
        return hypervolume2d([spec.vector(r.metrics, r.status) for r in self.front2d(spec)], reference)

    def best(self) -> TrialRecord:
        """Lowest performance objective at max budget; earlier trial wins ties."""
        recs = self.final_records()
        return min(recs, key=lambda r: (r.objective(self.objectives.performance), r.trial_id))


class _Loop:
    def __init__(self, sp, evaluator, objectives, scalarization, hyperband, trial_budget, seed, pipeline,
                 proposer, workers, initial_design, n_candidates, progress):
        self.search_repair = searches_repair_level(pipeline)
        if self.search_repair:
            # the repair level becomes one more continuous dimension seen by the surrogate
            level = Domain(REPAIR_LEVEL, "continuous-linear", 0.0, 1.0, default=1.0)
            sp = SearchSpace(sp.family, sp.domains + (level,), sp.architectural)
        self.sp = sp
        self.evaluator = evaluator
        self.objectives = objectives
        self.sc = scalarization
        self.hb = hyperband
        self.trial_budget = trial_budget
        self.seed = seed
        self.pipeline = pipeline
        self.proposer = proposer
        self.workers = workers
        self.initial_design = min(initial_design, trial_budget)
        self.n_candidates = n_candidates
        self.progress = progress
        self.rng = np.random.default_rng(derive_seed(seed, "proposals"))
        self.weight_rng = np.random.default_rng(derive_seed(seed, "weights", scalarization.seed))
        self.history: list[Observation] = []
        self.records: list[TrialRecord] = []
        self.seen: set[str] = set()
        self.n_proposed = 0
        self.archive = ParetoArchive(max_budget=hyperband.max_budget)
        self.brackets: list[str] = []

    # -------------------------------------------------------------- scalarization

    def _weights(self) -> np.ndarray:
        k = len(self.objectives.names)
        if k == 1:
            return np.ones(1)
        if self.sc.strategy == PAREGO and self.sc.weights is None:
            return simplex_weights(self.weight_rng, k)
        return np.asarray(self.sc.weights, dtype=float)

    def _scalar(self, vectors, weights) -> np.ndarray:
        lo, hi = bounds(np.array([o.vector for o in self.history]))
        return np.atleast_1d(scalarize(self.sc.strategy, normalize(vectors, lo, hi), weights, self.sc.rho))

    # -------------------------------------------------------------- proposals

    def _random(self) -> Configuration:
        for _ in range(100):
            c = sample(self.sp, self.rng)
            if c.key not in self.seen:
                return c
        return c

    def _features(self, configs, budget: int) -> np.ndarray:
        x = self.sp.encode(configs)
        return np.hstack([x, np.full((len(x), 1), budget / self.hb.max_budget)])

    def propose(self) -> Configuration:
        self.n_proposed += 1
        if (
            self.proposer == RANDOM
            or len(self.history) < self.initial_design
            or self.n_proposed % RANDOM_EVERY == 0
        ):
            return self._random()
        weights = self._weights()
        y = self._scalar([o.vector for o in self.history], weights)
        x = self._features([o.config for o in self.history], 0)
        x[:, -1] = [o.budget / self.hb.max_budget for o in self.history]
        model = ForestSurrogate(int(self.rng.integers(2**31))).fit(x, y)
        top = max(o.budget for o in self.history)
        at_top = [i for i, o in enumerate(self.history) if o.budget == top]
        inc = min(at_top, key=lambda i: (y[i], i))
        best = float(y[inc])
        candidates = [sample(self.sp, self.rng) for _ in range(self.n_candidates)]
        candidates += [mutate(self.sp, self.history[inc].config, self.rng) for _ in range(N_NEIGHBORS)]
        fresh = [c for c in candidates if c.key not in self.seen] or candidates
        mu, sigma = model.predict(self._features(fresh, self.hb.max_budget))
        ei = expected_improvement(mu, sigma, best)
        return fresh[int(np.argmax(ei))]

    # -------------------------------------------------------------- execution

    def _record(self, config: Configuration, record: TrialRecord) -> None:
        vector = self.objectives.vector(record.metrics, record.status)
        self.history.append(Observation(config, record.budget, vector, record.trial_id))
        self.records.append(record)
        self.seen.add(config.key)
        if record.budget == self.hb.max_budget:
            self.archive.update(ArchiveEntry(vector, config.key, record.budget, record.trial_id, record))
        if self.progress:
            self.progress(len(self.records), self.trial_budget, record)

    def _split(self, config: Configuration) -> tuple[Configuration, dict | None]:
        """Model configuration and pipeline descriptor of one searched point."""
        if not self.search_repair:
            return config, self.pipeline
        model = Configuration(config.family, tuple(kv for kv in config.values if kv[0] != REPAIR_LEVEL))
        return model, {**self.pipeline, REPAIR_LEVEL: float(config[REPAIR_LEVEL])}

    def _request(self, config: Configuration, budget: int) -> TrialRequest:
        model, pipeline = self._split(config)
        return TrialRequest(model, budget, self.seed, VAL, pipeline)

    def _run_rung(self, configs: list[Configuration] | None, rung: Rung) -> list[tuple[Configuration, TrialRecord]]:
        if configs is None:
            if self.workers <= 1:
                out = []
                for _ in range(rung.n_configs):
                    config = self.propose()
                    record = self.evaluator.evaluate(self._request(config, rung.budget))
                    self._record(config, record)
                    out.append((config, record))
                return out
            configs = []
            for _ in range(rung.n_configs):
                c = self.propose()
                self.seen.add(c.key)
                configs.append(c)
        records = self.evaluator.evaluate_many([self._request(c, rung.budget) for c in configs], self.workers)
        for c, r in zip(configs, records):
            self._record(c, r)
        return list(zip(configs, records))

    def run_bracket(self, bracket: Bracket) -> None:
        self.brackets.append(str(bracket))
        weights = self._weights()
        configs = None
        started: list[Configuration] = []
        for i, rung in enumerate(bracket.rungs):
            done = self._run_rung(configs, rung)
            if i == 0:
                started = [c for c, _ in done]
            if i + 1 == len(bracket.rungs):
                break
            keep = bracket.rungs[i + 1].n_configs
            scores = self._scalar([self.objectives.vector(r.metrics, r.status) for _, r in done], weights)
            order = sorted(range(len(done)), key=lambda j: (scores[j], done[j][1].trial_id))
            configs = [done[j][0] for j in order[:keep]]
        for c in started:
            model, pipeline = self._split(c)
            self.evaluator.release(model, self.seed, pipeline)

    def run(self) -> OptimizationResult:
        schedule = hyperband_schedule(self.hb)
        fallback = schedule[-1]
        i = 0
        while len(self.records) < self.trial_budget:
            remaining = self.trial_budget - len(self.records)
            bracket = schedule[i % len(schedule)]
            if bracket.n_trials > remaining:
                # the budget cannot finish this bracket: spend the rest on full-budget trials
                n = min(fallback.rungs[0].n_configs, remaining)
                bracket = Bracket(fallback.s, (Rung(n, fallback.rungs[0].budget),))
            self.run_bracket(bracket)
            i += 1
        return OptimizationResult(
            archive=self.archive,
            records=self.records,
            objectives=self.objectives,
            trial_budget=self.trial_budget,
            seed=self.seed,
            proposer=self.proposer,
            brackets=self.brackets,
        )


def optimize(
    sp: SearchSpace,
    evaluator: TrialEvaluator,
    objectives: ObjectiveSpec = ObjectiveSpec(),
    scalarization: ScalarizationConfig = ScalarizationConfig(),
    hyperband: HyperbandConfig = HyperbandConfig(),
    trial_budget: int = 200,
    seed: int = 0,
    pipeline: dict | None = None,
    proposer: str = BO,
    workers: int = 1,
    initial_design: int = INITIAL_DESIGN,
    n_candidates: int = N_CANDIDATES,
    progress: Callable | None = None,
) -> OptimizationResult:
    """Search ``sp`` for configurations on the Pareto front of ``objectives``.

    ``trial_budget`` counts evaluations (one per configuration and rung). With
    ``proposer="random"`` every configuration is sampled uniformly but still
    runs through the same Hyperband brackets. A pipeline of
    ``{"kind": "dir-repair", "repair_level": "search"}`` searches the repair
    level in [0, 1] jointly with the model hyperparameters. Results are deterministic for a
    given seed when ``workers == 1``.
    """
    if trial_budget < 1:
        raise ValueError("trial_budget must be >= 1")
    if proposer not in (BO, RANDOM):
        raise ValueError(f"unknown proposer {proposer!r}")
    if scalarization.weights is not None and len(scalarization.weights) != len(objectives.names):
        raise ValueError("scalarization weights must match the number of objectives")
    loop = _Loop(sp, evaluator, objectives, scalarization, hyperband, trial_budget, seed, pipeline,
                 proposer, workers, initial_design, n_candidates, progress)
    return loop.run()

"""Hyperband bracket schedule over epoch budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class HyperbandConfig:
    min_budget: int = 1
    max_budget: int = 10
    eta: int = 3

    def __post_init__(self):
        if not 1 <= self.min_budget <= self.max_budget:
            raise ValueError("need 1 <= min_budget <= max_budget")
        if self.eta < 2:
            raise ValueError("eta must be >= 2")

    @property
    def s_max(self) -> int:
        ratio = self.max_budget / self.min_budget
        s = int(math.floor(math.log(ratio, self.eta) + 1e-9))
        return s


@dataclass(frozen=True)
class Rung:
    n_configs: int
    budget: int


@dataclass(frozen=True)
class Bracket:
    s: int
    rungs: tuple[Rung, ...]

    @property
    def n_trials(self) -> int:
        return sum(r.n_configs for r in self.rungs)

    def __str__(self) -> str:
        return " -> ".join(f"{r.n_configs}@{r.budget}" for r in self.rungs)


def hyperband_schedule(cfg: HyperbandConfig = HyperbandConfig()) -> list[Bracket]:
    """Brackets from most to least aggressive.

    Bracket ``s`` starts ``ceil((s_max+1)/(s+1) * eta^s)`` configurations at budget
    ``max * eta^-s`` and keeps the top ``floor(n / eta)`` at every promotion.
    Budgets are rounded to integers and clipped to ``[min, max]``.
    """
    s_max = cfg.s_max
    out = []
    for s in range(s_max, -1, -1):
        n = int(math.ceil(round((s_max + 1) / (s + 1) * cfg.eta**s, 9)))
        rungs = []
        for i in range(s + 1):
            n_i = n // cfg.eta**i
            budget = min(cfg.max_budget, max(cfg.min_budget, int(round(cfg.max_budget * cfg.eta ** (i - s)))))
            rungs.append(Rung(n_i, budget))
        out.append(Bracket(s, tuple(rungs)))
    return out

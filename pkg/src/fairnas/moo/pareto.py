"""Pareto dominance, a nondominated archive and 2-D hypervolume (all minimization)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

EPS = 1e-9


def dominates(a: Sequence[float], b: Sequence[float], eps: float = EPS) -> bool:
    """True iff ``a <= b + eps`` everywhere and ``a < b - eps`` somewhere."""
    if len(a) != len(b):
        raise ValueError(f"objective vectors differ in length ({len(a)} vs {len(b)})")
    strictly = False
    for x, y in zip(a, b):
        if x > y + eps:
            return False
        if x < y - eps:
            strictly = True
    return strictly


def nondominated(points: Sequence[Sequence[float]], eps: float = EPS) -> list[int]:
    """Indices of points not dominated by any other point (quadratic reference filter)."""
    return [i for i, p in enumerate(points) if not any(dominates(q, p, eps) for j, q in enumerate(points) if j != i)]


@dataclass(frozen=True)
class ArchiveEntry:
    objectives: tuple[float, ...]
    config_key: str
    budget: int
    trial_id: int
    payload: Any = field(default=None, compare=False, hash=False)


class ParetoArchive:
    """Mutually nondominated entries of max-budget trials."""

    def __init__(self, max_budget: int | None = None, eps: float = EPS):
        self.max_budget = max_budget
        self.eps = eps
        self.entries: list[ArchiveEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def update(self, entry: ArchiveEntry) -> bool:
        """Insert ``entry`` unless some entry dominates it; returns whether it was inserted.

        Entries the newcomer dominates are removed. Re-inserting an entry with
        the same configuration and objectives leaves the archive unchanged.
        """
        if self.max_budget is not None and entry.budget != self.max_budget:
            raise ValueError(f"only budget-{self.max_budget} trials may enter the archive")
        for e in self.entries:
            if dominates(e.objectives, entry.objectives, self.eps):
                return False
            if e.config_key == entry.config_key and e.objectives == entry.objectives:
                return False
        self.entries = [e for e in self.entries if not dominates(entry.objectives, e.objectives, self.eps)]
        self.entries.append(entry)
        return True

    def extend(self, entries: Iterable[ArchiveEntry]) -> "ParetoArchive":
        for e in entries:
            self.update(e)
        return self

    def check(self) -> None:
        """Raise if the archive invariant is broken."""
        for i, a in enumerate(self.entries):
            for j, b in enumerate(self.entries):
                if i != j and dominates(a.objectives, b.objectives, self.eps):
                    raise AssertionError(f"entry {i} dominates entry {j}")

    def points(self) -> np.ndarray:
        return np.array([e.objectives for e in self.entries], dtype=float)

    def sorted(self) -> list[ArchiveEntry]:
        return sorted(self.entries, key=lambda e: (e.objectives, e.trial_id))


def hypervolume2d(front: Iterable[Sequence[float]], reference: Sequence[float] = (1.0, 1.0)) -> float:
    """Area dominated by ``front`` and bounded by ``reference``.

    Raises:
        ValueError: a point lies beyond the reference or is not 2-D.
    """
    pts = [tuple(map(float, p)) for p in front]
    if not pts:
        return 0.0
    r1, r2 = map(float, reference)
    for p in pts:
        if len(p) != 2:
            raise ValueError("hypervolume2d needs 2-D points")
        if p[0] > r1 or p[1] > r2:
            raise ValueError(f"point {p} lies beyond the reference {tuple(reference)}")
    pts.sort()
    area, ceiling = 0.0, r2
    for x, y in pts:
        if y < ceiling:
            area += (r1 - x) * (ceiling - y)
            ceiling = y
    return area

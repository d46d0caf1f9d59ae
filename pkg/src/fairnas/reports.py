"""Report data: CSV/JSON writers, archive tables, mode comparison and a tiny SVG scatter writer."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

from .evaluator import OBJECTIVES, TrialEvaluator, TrialRecord, ProbeResult
from .metrics import MetricVector
from .moo import HyperbandConfig, ObjectiveSpec, OptimizationResult, ScalarizationConfig, optimize
from .space import SearchSpace

METRIC_COLUMNS = (
    "accuracy",
    "balanced_accuracy",
    "statistical_parity_difference",
    "disparate_impact",
    "equal_opportunity_difference",
    "average_odds_difference",
    "selection_rate",
)


# ------------------------------------------------------------------ plain files


def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return v


def write_csv(path: str | Path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(dict.fromkeys(k for r in rows for k in r))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in columns})
    return path


def _parse(v: str):
    if v == "":
        return None
    for kind in (int, float):
        try:
            return kind(v)
        except ValueError:
            pass
    return v


def read_csv(path: str | Path) -> list[dict]:
    """Read a CSV written by :func:`write_csv`; numbers come back as int/float, blanks as None."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _jsonable(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path: str | Path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------------ tables


def metric_columns(m: MetricVector, prefix: str) -> dict:
    return {f"{prefix}_{k}": getattr(m, k) for k in METRIC_COLUMNS}


def record_row(record: TrialRecord, evaluator: TrialEvaluator | None = None, **extra) -> dict:
    row = dict(extra)
    row.update(
        trial_id=record.trial_id,
        config_key=record.config.key,
        family=record.config.family,
        seed=record.seed,
        budget=record.budget,
        pipeline_key=record.pipeline_key,
        status=record.status,
    )
    row.update({f"hp_{k}": v for k, v in record.config.values})
    if record.pipeline and "repair_level" in record.pipeline:
        row["pipeline_repair_level"] = record.pipeline["repair_level"]
    row.update(metric_columns(record.metrics, "val"))
    if evaluator is not None:
        row.update(metric_columns(evaluator.test_metrics(record), "test"))
    return row


def archive_rows(result: OptimizationResult, evaluator: TrialEvaluator | None = None, **extra) -> list[dict]:
    """One row per archived trial with validation objectives and (optionally) test metrics."""
    rows = []
    for record in result.front():
        row = record_row(record, evaluator, **extra)
        for name in result.objectives.names:
            row[f"objective_{name}"] = record.objective(name)
        rows.append(row)
    return rows


def probe_rows(result: ProbeResult, fairness: str = "abs_spd") -> list[dict]:
    """Scatter data: per-configuration seed-averaged accuracy and fairness."""
    rows = []
    for s in result.summaries:
        row = {"config_key": s.config.key, "n_seeds": s.n_seeds}
        row.update({f"hp_{k}": v for k, v in s.config.values})
        row.update(
            accuracy=s.mean["accuracy"],
            accuracy_std=s.std["accuracy"],
            balanced_accuracy=s.mean["balanced_accuracy"],
            fairness=s.mean[fairness],
            fairness_std=s.std[fairness],
            trivial_fraction=s.trivial_fraction,
        )
        rows.append(row)
    return rows


# ------------------------------------------------------------------ single vs multi


@dataclass
class SeedComparison:
    seed: int
    single: OptimizationResult
    multi: OptimizationResult
    fairness: str
    tolerance: float

    def headline(self) -> dict:
        """Fairness of the single-objective best model vs. the fairest comparable multi-objective point."""
        best = self.single.best()
        best_ba = best.metrics.balanced_accuracy
        best_fair = OBJECTIVES[self.fairness](best.metrics)
        comparable = [
            r for r in self.multi.front() if r.status == "ok" and r.metrics.balanced_accuracy >= best_ba - self.tolerance
        ]
        out = {
            "seed": self.seed,
            "single_best_trial": best.trial_id,
            "single_best_balanced_accuracy": best_ba,
            "single_best_fairness": best_fair,
            "multi_front_size": len(self.multi.archive),
            "multi_comparable_points": len(comparable),
        }
        if comparable:
            pick = min(comparable, key=lambda r: (OBJECTIVES[self.fairness](r.metrics), -r.metrics.balanced_accuracy))
            fair = OBJECTIVES[self.fairness](pick.metrics)
            out.update(
                multi_trial=pick.trial_id,
                multi_balanced_accuracy=pick.metrics.balanced_accuracy,
                multi_fairness=fair,
                fairness_ratio=fair / best_fair if best_fair > 0 else (0.0 if fair == 0 else math.inf),
                balanced_accuracy_delta=pick.metrics.balanced_accuracy - best_ba,
            )
        return out


@dataclass
class Comparison:
    seeds: list[SeedComparison] = field(default_factory=list)

    def headlines(self) -> list[dict]:
        return [s.headline() for s in self.seeds]

    def front_rows(self, evaluator_for=None) -> list[dict]:
        rows = []
        for s in self.seeds:
            pair = ObjectiveSpec(s.multi.objectives.performance, s.fairness)
            for mode, result in (("single", s.single), ("multi", s.multi)):
                ev = evaluator_for(s.seed) if evaluator_for else None
                for r in result.front2d(pair):
                    row = record_row(r, ev, mode=mode, run_seed=s.seed)
                    row.update({f"objective_{n}": r.objective(n) for n in pair.names})
                    rows.append(row)
        return rows


def compare_modes(
    sp: SearchSpace,
    evaluator_for,
    objectives: ObjectiveSpec,
    scalarization: ScalarizationConfig,
    hyperband: HyperbandConfig,
    trial_budget: int,
    seeds: Iterable[int],
    pipeline: dict | None = None,
    workers: int = 1,
    tolerance: float = 0.02,
    single_trial_budget: int | None = None,
    progress=None,
) -> Comparison:
    """Run performance-only and multi-objective optimization with the same seeds and budget.

    ``evaluator_for(seed)`` supplies the evaluator for each seed (it may be shared).
    """
    if objectives.single:
        raise ValueError("the multi-objective mode needs a fairness objective")
    if single_trial_budget is not None and single_trial_budget != trial_budget:
        raise ValueError("single- and multi-objective runs need equal trial budgets")
    out = Comparison()
    for seed in seeds:
        ev = evaluator_for(seed)
        common = dict(hyperband=hyperband, trial_budget=trial_budget, seed=seed, pipeline=pipeline, workers=workers)
        single = optimize(sp, ev, ObjectiveSpec(objectives.performance, None), scalarization, progress=progress, **common)
        multi = optimize(sp, ev, objectives, scalarization, progress=progress, **common)
        out.seeds.append(SeedComparison(seed, single, multi, objectives.fairness, tolerance))
    return out


# ------------------------------------------------------------------ SVG


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_scatter(
    series: Mapping[str, Sequence[tuple[float, float]]],
    path: str | Path,
    xlabel: str,
    ylabel: str,
    title: str = "",
    width: int = 560,
    height: int = 420,
) -> Path:
    """Static scatter plot, one colour per series, written as a standalone SVG file."""
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(x) and math.isfinite(y)]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 64, 16, 36, 48
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text transform="translate(14,{mt + ph / 2}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx, fy = x0 + (x1 - x0) * i / 4, y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 16}" text-anchor="middle">{fx:.3g}</text>')
        parts.append(f'<text x="{ml - 6}" y="{sy(fy) + 4:.1f}" text-anchor="end">{fy:.3g}</text>')
    for k, (name, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        for x, y in s:
            if math.isfinite(x) and math.isfinite(y):
                parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}" fill-opacity="0.7"/>')
        parts.append(f'<circle cx="{ml + pw - 110}" cy="{mt + 12 + 14 * k}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{ml + pw - 100}" y="{mt + 16 + 14 * k}">{escape(str(name))}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path

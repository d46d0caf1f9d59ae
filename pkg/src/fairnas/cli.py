"""Command-line entry point: ``fairnas probe|optimize|compare|report``.

Exit codes: 0 success, 1 invalid configuration or input, 2 a trial failed after retries.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from datetime import datetime
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, RunConfig
from .data import DataError
from .evaluator import TrialEvaluator, TrialFailure, probe
from .mitigation import StageError
from .moo import optimize
from .reports import (
    Comparison,
    archive_rows,
    compare_modes,
    probe_rows,
    read_csv,
    svg_scatter,
    write_csv,
    write_json,
)
from .space import SpaceError

CHECKPOINT_ENV = "FAIRNAS_CHECKPOINT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_TRIAL = 0, 1, 2

log = logging.getLogger("fairnas")


def run_directory(root: str | Path, command: str) -> Path:
    """A fresh ``<root>/<command>-<timestamp>`` directory."""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-{stamp}"
    path, n = base, 1
    while path.exists():
        n += 1
        path = base.with_name(f"{base.name}-{n}")
    path.mkdir(parents=True)
    return path


def _setup(args) -> tuple[RunConfig, Path]:
    cfg = RunConfig.from_file(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    if args.serial:
        cfg.workers = 1
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if os.environ.get(CHECKPOINT_ENV):
        cfg.checkpoint_dir = os.environ[CHECKPOINT_ENV]
    if getattr(args, "seeds", None):
        cfg.seeds = args.seeds
    if getattr(args, "trial_budget", None):
        cfg.trial_budget = args.trial_budget
    cfg.validate()
    out = run_directory(Path(cfg.base_dir) / cfg.output_dir if not Path(cfg.output_dir).is_absolute() else cfg.output_dir,
                        args.command)
    (out / "run_config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
    return cfg, out


def _evaluator(cfg: RunConfig, dataset, out: Path, name: str) -> TrialEvaluator:
    ckpt = Path(cfg.checkpoint_dir) / name if cfg.checkpoint_dir else None
    return TrialEvaluator(
        dataset,
        checkpoint_dir=ckpt,
        log_path=out / f"{name}.jsonl",
        cache_path=cfg.cache_path,
        dtype=cfg.np_dtype,
    )


def _progress(prefix: str):
    t0 = time.perf_counter()

    def report(done, total, *_):
        log.info("%s %d/%d (%.0fs)", prefix, done, total, time.perf_counter() - t0)

    return report


def cmd_probe(args) -> int:
    cfg, out = _setup(args)
    dataset = cfg.load_dataset()
    ev = _evaluator(cfg, dataset, out, "trials")
    result = probe(
        cfg.search_space(),
        cfg.probe.n_configs,
        cfg.probe.seeds,
        ev,
        workers=cfg.workers,
        sample_seed=cfg.root_seed,
        progress=_progress("probe"),
    )
    rows = probe_rows(result, cfg.probe.fairness)
    write_csv(out / "scatter.csv", rows)
    summary = result.summary()
    summary["fairness_metric"] = cfg.probe.fairness
    summary["family"] = cfg.family
    write_json(out / "summary.json", summary)
    svg_scatter(
        {cfg.family: [(r["accuracy"], r["fairness"]) for r in rows]},
        out / "scatter.svg",
        "accuracy",
        cfg.probe.fairness,
        f"{cfg.family} probe",
    )
    ev.close()
    print(out)
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg, out = _setup(args)
    dataset = cfg.load_dataset()
    rows = []
    for seed in cfg.seeds:
        ev = _evaluator(cfg, dataset, out, f"trials-seed{seed}")
        result = optimize(
            cfg.search_space(),
            ev,
            cfg.objectives,
            cfg.scalarization,
            cfg.hyperband,
            cfg.trial_budget,
            seed=seed,
            pipeline=cfg.pipeline,
            workers=cfg.workers,
            progress=_progress(f"seed {seed}"),
        )
        seed_rows = archive_rows(result, ev, run_seed=seed)
        write_json(out / f"archive-seed{seed}.json", {"brackets": result.brackets, "entries": seed_rows})
        rows.extend(seed_rows)
        ev.close()
    write_csv(out / "archive.csv", rows)
    if not cfg.objectives.single:
        perf, fair = cfg.objectives.names
        svg_scatter(
            {f"seed {s}": [(r[f"objective_{perf}"], r[f"objective_{fair}"]) for r in rows if r["run_seed"] == s]
             for s in cfg.seeds},
            out / "front.svg",
            perf,
            fair,
            "validation Pareto front",
        )
    print(out)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, out = _setup(args)
    dataset = cfg.load_dataset()
    evaluators: dict[int, TrialEvaluator] = {}

    def evaluator_for(seed):
        if seed not in evaluators:
            evaluators[seed] = _evaluator(cfg, dataset, out, f"trials-seed{seed}")
        return evaluators[seed]

    comparison: Comparison = compare_modes(
        cfg.search_space(),
        evaluator_for,
        cfg.objectives,
        cfg.scalarization,
        cfg.hyperband,
        cfg.trial_budget,
        cfg.seeds,
        pipeline=cfg.pipeline,
        workers=cfg.workers,
        single_trial_budget=cfg.single_trial_budget,
        progress=_progress("compare"),
    )
    rows = comparison.front_rows(evaluator_for)
    write_csv(out / "fronts.csv", rows)
    write_json(out / "headline.json", {"seeds": comparison.headlines()})
    perf, fair = cfg.objectives.names
    svg_scatter(
        {mode: [(r[f"objective_{perf}"], r[f"objective_{fair}"]) for r in rows if r["mode"] == mode]
         for mode in ("single", "multi")},
        out / "fronts.svg",
        perf,
        fair,
        "single vs multi-objective",
    )
    for ev in evaluators.values():
        ev.close()
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    """Re-draw plots of a finished run directory from its CSV files."""
    run = Path(args.run_dir)
    if not run.is_dir():
        raise ConfigError(f"run directory not found: {run}")
    made = []
    if (run / "scatter.csv").exists():
        rows = read_csv(run / "scatter.csv")
        made.append(svg_scatter({"configs": [(r["accuracy"], r["fairness"]) for r in rows]},
                                run / "scatter.svg", "accuracy", "fairness", "probe"))
    for name, key in (("archive.csv", "run_seed"), ("fronts.csv", "mode")):
        if (run / name).exists():
            rows = read_csv(run / name)
            obj = [c for c in rows[0] if c.startswith("objective_")] if rows else []
            if len(obj) == 2:
                groups = {}
                for r in rows:
                    groups.setdefault(str(r[key]), []).append((r[obj[0]], r[obj[1]]))
                made.append(svg_scatter(groups, run / (Path(name).stem + ".svg"), obj[0][10:], obj[1][10:], name))
    if not made:
        raise ConfigError(f"{run} holds no probe, archive or comparison CSV")
    for p in made:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairnas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_run_options(p):
        p.add_argument("config", help="run config (YAML or JSON)")
        p.add_argument("--workers", type=int, default=None, help="evaluation processes (default from config)")
        p.add_argument("--serial", action="store_true", help="force one worker for deterministic output")
        p.add_argument("--output-dir", default=None, help="parent of the timestamped run directory")
        return p

    p = with_run_options(sub.add_parser("probe", help="train random configurations and summarize their spread"))
    p.set_defaults(func=cmd_probe)
    p = with_run_options(sub.add_parser("optimize", help="multi-objective search; writes the Pareto archive"))
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="override the run seeds")
    p.add_argument("--trial-budget", type=int, default=None)
    p.set_defaults(func=cmd_optimize)
    p = with_run_options(sub.add_parser("compare", help="single- vs multi-objective runs on the same seeds"))
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--trial-budget", type=int, default=None)
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("report", help="re-draw SVG plots from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, SpaceError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrialFailure as exc:
        print(f"trial failure: {exc}", file=sys.stderr)
        return EXIT_TRIAL


if __name__ == "__main__":
    sys.exit(main())

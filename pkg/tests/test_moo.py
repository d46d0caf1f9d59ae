import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fairnas.data import synthetic
from fairnas.evaluator import TrialEvaluator
from fairnas.moo import (
    ArchiveEntry,
    HyperbandConfig,
    ObjectiveSpec,
    ParetoArchive,
    ScalarizationConfig,
    bounds,
    dominates,
    expected_improvement,
    hyperband_schedule,
    hypervolume2d,
    nondominated,
    normalize,
    optimize,
    scalarize,
)
from fairnas.space import space
from oracles import hyperband_by_hand, nondominated_bruteforce, union_area

unit = st.floats(0, 1, allow_nan=False)
# a 1e-3 grid keeps points far outside the 1e-9 dominance slack, where the exact oracle applies
grid = st.integers(0, 1000).map(lambda k: k / 1000)
points2d = st.lists(st.tuples(grid, grid), min_size=0, max_size=60)


def test_dominance_examples():
    assert dominates((0.1, 0.2), (0.2, 0.3))
    assert not dominates((0.2, 0.3), (0.1, 0.2))
    assert not dominates((0.3, 0.3), (0.3, 0.3))
    assert not dominates((0.1, 0.4), (0.2, 0.3)) and not dominates((0.2, 0.3), (0.1, 0.4))
    assert dominates((0.1, 0.3), (0.1, 0.4))
    # differences inside the tolerance do not count
    assert not dominates((0.3, 0.3 - 1e-12), (0.3, 0.3))
    with pytest.raises(ValueError):
        dominates((0.1,), (0.1, 0.2))


def entry(p, i):
    return ArchiveEntry(tuple(p), f"c{i}", 10, i)


def test_empty_archive_takes_any_entry():
    a = ParetoArchive(max_budget=10)
    assert a.update(entry((0.5, 0.5), 0))
    assert len(a) == 1


def test_archive_rejects_low_budget_and_is_idempotent():
    a = ParetoArchive(max_budget=10)
    with pytest.raises(ValueError):
        a.update(ArchiveEntry((0.1, 0.1), "x", 3, 0))
    a.update(entry((0.2, 0.4), 0))
    a.update(entry((0.4, 0.2), 1))
    before = [e.objectives for e in a.sorted()]
    a.update(entry((0.2, 0.4), 0))
    assert [e.objectives for e in a.sorted()] == before


@settings(max_examples=200, deadline=None)
@given(points2d)
def test_archive_matches_bruteforce(points):
    a = ParetoArchive(max_budget=10)
    for i, p in enumerate(points):
        a.update(entry(p, i))
        a.check()
    expected = {tuple(points[i]) for i in nondominated_bruteforce(points)}
    assert {e.objectives for e in a} == expected
    assert {tuple(points[i]) for i in nondominated(points)} == expected


def test_archive_on_random_clouds():
    rng = np.random.default_rng(0)
    for k in (2, 3):
        pts = [tuple(p) for p in rng.random((200, k))]
        a = ParetoArchive(max_budget=10).extend(entry(p, i) for i, p in enumerate(pts))
        assert {e.objectives for e in a} == {pts[i] for i in nondominated_bruteforce(pts)}


def test_hypervolume_examples():
    assert hypervolume2d([(0.2, 0.2)]) == pytest.approx(0.64, abs=1e-15)
    assert hypervolume2d([(0.1, 0.5), (0.5, 0.1)]) == pytest.approx(0.65, abs=1e-15)
    assert hypervolume2d([]) == 0.0
    with pytest.raises(ValueError):
        hypervolume2d([(0.5, 1.2)])


@settings(max_examples=200, deadline=None)
@given(points2d)
def test_hypervolume_matches_union_area(points):
    assert hypervolume2d(points) == pytest.approx(union_area(points, (1.0, 1.0)), abs=1e-12)


def test_parego_examples():
    assert scalarize("parego", (0.3, 0.5), (1.0, 0.0), 0.05) == pytest.approx(0.315, abs=1e-15)
    assert scalarize("parego", (0.2, 0.4), (0.5, 0.5), 0.05) == pytest.approx(0.215, abs=1e-15)
    assert scalarize("weighted-mean", (0.37, 0.9), (1.0, 0.0)) == 0.37


def test_scalarization_config_validation():
    with pytest.raises(ValueError):
        ScalarizationConfig(rho=0.0)
    with pytest.raises(ValueError):
        ScalarizationConfig(weights=(0.7, 0.7))
    with pytest.raises(ValueError):
        ScalarizationConfig(strategy="weighted-mean")
    with pytest.raises(ValueError):
        ObjectiveSpec(fairness="abs_one_minus_di")


def test_degenerate_bounds_widen():
    lo, hi = bounds([[0.3, 0.1], [0.3, 0.5]])
    assert hi[0] - lo[0] == pytest.approx(1e-12)
    assert np.all(np.isfinite(normalize([[0.3, 0.2]], lo, hi)))


weights = st.floats(0.01, 1.0).map(lambda w: (w, 1.0 - w))


@settings(max_examples=300, deadline=None)
@given(st.tuples(unit, unit), st.tuples(st.floats(0, 0.5), st.floats(0, 0.5)), weights,
       st.sampled_from(["parego", "weighted-mean"]))
def test_dominated_points_scalarize_worse(f, delta, w, strategy):
    assume(max(delta) > 1e-6 and min(w) > 1e-3)
    g = (f[0] + delta[0], f[1] + delta[1])
    assert scalarize(strategy, f, w) < scalarize(strategy, g, w)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(unit, unit), min_size=3, max_size=30, unique=True),
       st.floats(0.1, 100), st.floats(-5, 5), weights)
def test_affine_rescaling_keeps_the_argmin(points, scale, shift, w):
    raw = np.array(points)
    assume(np.ptp(raw[:, 0]) > 1e-3)
    moved = raw.copy()
    moved[:, 0] = scale * moved[:, 0] + shift
    a = scalarize("parego", normalize(raw, *bounds(raw)), w)
    b = scalarize("parego", normalize(moved, *bounds(moved)), w)
    np.testing.assert_allclose(a, b, atol=1e-9)
    best = np.flatnonzero(a <= a.min() + 1e-9)
    assert np.argmin(b) in best


def test_expected_improvement():
    assert expected_improvement([0.5], [0.0], 0.4)[0] == 0.0
    assert expected_improvement([0.3], [0.0], 0.4)[0] == pytest.approx(0.1)
    # at mu == best the closed form reduces to sigma / sqrt(2 pi)
    assert expected_improvement([0.4], [0.2], 0.4)[0] == pytest.approx(0.2 / np.sqrt(2 * np.pi))
    assert np.all(expected_improvement(np.linspace(0, 1, 11), np.full(11, 0.1), 0.5) >= 0)


def table(cfg):
    return [[(r.n_configs, r.budget) for r in b.rungs] for b in hyperband_schedule(cfg)]


def test_hyperband_tables():
    assert table(HyperbandConfig(1, 10, 3)) == hyperband_by_hand()
    assert [str(b) for b in hyperband_schedule()][0] == "9@1 -> 3@3 -> 1@10"
    assert table(HyperbandConfig(1, 1, 3)) == [[(1, 1)]]
    budgets = {r.budget for b in hyperband_schedule(HyperbandConfig(1, 9, 3)) for r in b.rungs}
    assert budgets == {1, 3, 9}
    with pytest.raises(ValueError):
        HyperbandConfig(1, 10, 1)
    with pytest.raises(ValueError):
        HyperbandConfig(5, 2, 3)


@pytest.fixture(scope="module")
def separable():
    return synthetic(600, 0.5, seed=0)


def small_space():
    return space("MLP", overrides={
        "depth": {"values": [1, 2], "default": 2},
        "base_width": {"values": [16, 32, 64], "default": 32},
        "batch_size": {"values": [32, 64], "default": 64},
    })


def test_single_objective_finds_an_accurate_model(separable):
    res = optimize(small_space(), TrialEvaluator(separable), ObjectiveSpec(fairness=None), trial_budget=30, seed=0)
    assert len(res.records) == 30
    assert res.best().objective("error") <= 0.05
    # a single objective leaves only ties on the front
    assert {e.objectives for e in res.archive} == {(res.best().objective("error"),)}


def test_trial_budget_one_archives_the_single_design(separable):
    res = optimize(small_space(), TrialEvaluator(separable), trial_budget=1, seed=0)
    assert len(res.records) == 1 and res.records[0].budget == 10
    assert [e.trial_id for e in res.archive] == [0]


def test_truncated_budget_keeps_archive_valid(separable):
    res = optimize(small_space(), TrialEvaluator(separable), trial_budget=25, seed=1)
    assert len(res.records) == 25
    res.archive.check()
    assert all(e.budget == 10 for e in res.archive)
    archived = {e.trial_id for e in res.archive}
    finals = [r for r in res.records if r.budget == 10]
    vectors = [res.objectives.vector(r.metrics, r.status) for r in finals]
    assert archived == {finals[i].trial_id for i in nondominated_bruteforce(vectors)}


def strip(path):
    out = []
    for line in path.read_text().splitlines():
        d = json.loads(line)
        d.pop("wall_time")
        out.append(d)
    return out


def test_serial_runs_are_reproducible(separable, tmp_path):
    for name in ("a", "b"):
        ev = TrialEvaluator(separable, log_path=tmp_path / f"{name}.jsonl", cache=False)
        optimize(small_space(), ev, trial_budget=22, seed=3)
    assert strip(tmp_path / "a.jsonl") == strip(tmp_path / "b.jsonl")
    ev = TrialEvaluator(separable, log_path=tmp_path / "c.jsonl", cache=False)
    optimize(small_space(), ev, trial_budget=22, seed=4)
    assert strip(tmp_path / "a.jsonl") != strip(tmp_path / "c.jsonl")


def test_random_proposer_uses_the_same_brackets(separable):
    res = optimize(small_space(), TrialEvaluator(separable), trial_budget=22, seed=0, proposer="random")
    assert res.brackets == ["9@1 -> 3@3 -> 1@10", "5@3 -> 1@10", "3@10"]
    assert sum(r.budget == 10 for r in res.records) == 5
    with pytest.raises(ValueError):
        optimize(small_space(), TrialEvaluator(separable), proposer="grid")


def test_promotions_follow_the_scalarized_ranking(separable):
    res = optimize(small_space(), TrialEvaluator(separable), ObjectiveSpec(fairness=None), trial_budget=13, seed=2,
                   proposer="random")
    first = res.records[:9]
    promoted = {r.config.key for r in res.records[9:12]}
    ranked = sorted(first, key=lambda r: (r.objective("error"), r.trial_id))
    assert promoted == {r.config.key for r in ranked[:3]}


def test_repair_level_can_be_searched(separable):
    pipeline = {"kind": "dir-repair", "repair_level": "search"}
    res = optimize(small_space(), TrialEvaluator(separable), trial_budget=22, seed=0, pipeline=pipeline)
    levels = [r.pipeline["repair_level"] for r in res.records]
    assert all(isinstance(v, float) and 0.0 <= v <= 1.0 for v in levels)
    assert len(set(levels[:9])) == 9
    assert all("repair_level" not in dict(r.config.values) for r in res.records)
    # a promoted configuration keeps its repair level across rungs
    by_config = {}
    for r in res.records:
        by_config.setdefault(r.config.key, set()).add(r.pipeline["repair_level"])
    assert all(len(v) == 1 for v in by_config.values())

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairnas.metrics import METRIC_NAMES, MetricVector, confusion, evaluate, metrics
from oracles import isclose_or_both_none, metric_oracle


def triples(min_size=2, max_size=50):
    return st.integers(min_size, max_size).flatmap(
        lambda n: st.tuples(
            st.lists(st.integers(0, 1), min_size=n, max_size=n),
            st.lists(st.integers(0, 1), min_size=n, max_size=n),
            st.lists(st.integers(0, 1), min_size=n, max_size=n),
        )
    ).filter(lambda t: 0 < sum(t[2]) < len(t[2]))


def test_perfect_classifier_tally():
    c = confusion([1, 0], [1, 0], [1, 0])
    assert (c.privileged.tp, c.privileged.fp, c.privileged.tn, c.privileged.fn) == (1, 0, 0, 0)
    assert (c.unprivileged.tp, c.unprivileged.fp, c.unprivileged.tn, c.unprivileged.fn) == (0, 0, 1, 0)


def test_hand_tally():
    c = confusion([1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 0, 0])
    assert (c.privileged.tp, c.privileged.fp, c.privileged.tn, c.privileged.fn) == (1, 1, 0, 0)
    assert (c.unprivileged.tp, c.unprivileged.fp, c.unprivileged.tn, c.unprivileged.fn) == (0, 0, 1, 1)


@pytest.mark.parametrize(
    "args,msg",
    [
        (([1, 0], [1], [1, 0]), "length mismatch"),
        (([1, 0], [1, 0], [1, 1]), "unprivileged group absent"),
        (([1, 0], [1, 0], [0, 0]), "privileged group absent"),
        (([2, 0], [1, 0], [1, 0]), "binary"),
        (([], [], []), "empty"),
    ],
)
def test_confusion_rejects(args, msg):
    with pytest.raises(ValueError, match=msg):
        confusion(*args)


def test_selection_rate_example():
    # unprivileged selects 2 of 5, privileged 3 of 5
    preds = [1, 1, 0, 0, 0] + [1, 1, 1, 0, 0]
    labels = [1, 0, 1, 0, 1] + [1, 0, 1, 0, 1]
    prot = [0] * 5 + [1] * 5
    m = metrics(preds, labels, prot)
    assert m.statistical_parity_difference == pytest.approx(-0.2, abs=1e-15)
    assert m.disparate_impact == pytest.approx(2 / 3, abs=1e-15)


def test_identical_groups_are_fair():
    preds = [1, 0, 1, 0, 1, 0, 1, 0]
    labels = [1, 1, 0, 0, 1, 1, 0, 0]
    prot = [1, 1, 1, 1, 0, 0, 0, 0]
    m = metrics(preds, labels, prot)
    assert m.statistical_parity_difference == 0
    assert m.average_odds_difference == 0
    assert m.equal_opportunity_difference == 0
    assert m.disparate_impact == 1


def test_balanced_accuracy_from_rates():
    # pooled TPR = 4/5, TNR = 3/5
    labels = [1] * 5 + [0] * 5
    preds = [1, 1, 1, 1, 0] + [0, 0, 0, 1, 1]
    prot = [1, 0] * 5
    assert metrics(preds, labels, prot).balanced_accuracy == pytest.approx(0.7, abs=1e-15)


def test_undefined_disparate_impact_is_flagged_not_zero():
    m = metrics([0, 0, 1, 0], [1, 0, 1, 0], [1, 1, 0, 0])
    assert math.isnan(m.disparate_impact)
    assert "disparate_impact" in m.undefined
    assert m.statistical_parity_difference == 0.5


def test_missing_positive_labels_leave_tpr_terms_undefined():
    m = metrics([1, 0, 1, 0], [0, 0, 0, 0], [1, 1, 0, 0])
    assert {"balanced_accuracy", "equal_opportunity_difference", "average_odds_difference"} <= m.undefined
    assert m.is_defined("statistical_parity_difference")


def test_metric_vector_dict_round_trip():
    m = metrics([0, 0, 1, 0], [1, 0, 1, 0], [1, 1, 0, 0])
    back = MetricVector.from_dict(m.to_dict())
    assert back.undefined == m.undefined
    for k in METRIC_NAMES:
        assert isclose_or_both_none(getattr(m, k), getattr(back, k), 0)


def test_worst_case_is_all_undefined():
    assert MetricVector.worst_case().undefined == frozenset(METRIC_NAMES)


@settings(max_examples=300, deadline=None)
@given(triples())
def test_matches_counting_oracle(t):
    m = metrics(*t)
    ref = metric_oracle(*t)
    for k in METRIC_NAMES:
        assert isclose_or_both_none(getattr(m, k), ref[k])


@settings(max_examples=200, deadline=None)
@given(triples())
def test_group_swap_negates_differences(t):
    p, y, s = t
    a = metrics(p, y, s)
    b = metrics(p, y, [1 - v for v in s])
    for k in ("statistical_parity_difference", "average_odds_difference", "equal_opportunity_difference"):
        if a.is_defined(k):
            assert b.is_defined(k)
            assert getattr(b, k) == pytest.approx(-getattr(a, k), abs=1e-15)
    if a.is_defined("disparate_impact") and b.is_defined("disparate_impact"):
        assert b.disparate_impact == pytest.approx(1 / a.disparate_impact, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(triples(), st.randoms(use_true_random=False))
def test_row_permutation_invariance(t, rnd):
    order = list(range(len(t[0])))
    rnd.shuffle(order)
    a = metrics(*t)
    b = metrics(*[[v[i] for i in order] for v in t])
    assert a.to_dict() == b.to_dict()


@settings(max_examples=200, deadline=None)
@given(triples())
def test_ranges_and_counts(t):
    c = confusion(*t)
    assert c.n == len(t[0])
    assert c.privileged.n == sum(t[2])
    m = evaluate(c)
    for k in ("accuracy", "balanced_accuracy", "selection_rate"):
        v = getattr(m, k)
        assert math.isnan(v) or 0 <= v <= 1
    for k in ("statistical_parity_difference", "average_odds_difference", "equal_opportunity_difference"):
        v = getattr(m, k)
        assert math.isnan(v) or -1 <= v <= 1
    assert math.isnan(m.disparate_impact) or m.disparate_impact >= 0


def test_numpy_inputs_accepted():
    rng = np.random.default_rng(0)
    p, y = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
    s = np.r_[np.ones(15, int), np.zeros(15, int)]
    assert metrics(p.astype(bool), y, s).accuracy == pytest.approx(np.mean(p == y))

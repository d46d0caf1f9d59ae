"""Independent reference implementations used only by the tests.

Each one recomputes a quantity by the most literal route available (row loops,
all-pairs comparisons, coordinate compression) so that it shares no code with
the package.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction


def metric_oracle(preds, labels, protected) -> dict:
    """Group metrics from row-by-row tallies with exact rational arithmetic."""
    rows = list(zip(map(int, preds), map(int, labels), map(int, protected)))

    def rate(cond, event):
        den = [r for r in rows if cond(r)]
        if not den:
            return None
        return Fraction(sum(1 for r in den if event(r)), len(den))

    def sub(a, b):
        return None if a is None or b is None else a - b

    sel_u = rate(lambda r: r[2] == 0, lambda r: r[0] == 1)
    sel_p = rate(lambda r: r[2] == 1, lambda r: r[0] == 1)
    tpr_u = rate(lambda r: r[2] == 0 and r[1] == 1, lambda r: r[0] == 1)
    tpr_p = rate(lambda r: r[2] == 1 and r[1] == 1, lambda r: r[0] == 1)
    fpr_u = rate(lambda r: r[2] == 0 and r[1] == 0, lambda r: r[0] == 1)
    fpr_p = rate(lambda r: r[2] == 1 and r[1] == 0, lambda r: r[0] == 1)
    sens = rate(lambda r: r[1] == 1, lambda r: r[0] == 1)
    spec = rate(lambda r: r[1] == 0, lambda r: r[0] == 0)
    gap_f, gap_t = sub(fpr_u, fpr_p), sub(tpr_u, tpr_p)
    out = {
        "accuracy": Fraction(sum(1 for p, y, _ in rows if p == y), len(rows)),
        "balanced_accuracy": None if sens is None or spec is None else (sens + spec) / 2,
        "statistical_parity_difference": sub(sel_u, sel_p),
        "disparate_impact": None if sel_u is None or not sel_p else sel_u / sel_p,
        "average_odds_difference": None if gap_f is None or gap_t is None else (gap_f + gap_t) / 2,
        "equal_opportunity_difference": gap_t,
    }
    return {k: (None if v is None else float(v)) for k, v in out.items()}


def nondominated_bruteforce(points) -> set[int]:
    """Indices of points that no other point weakly beats everywhere and strictly somewhere."""
    keep = set()
    for i, p in enumerate(points):
        beaten = False
        for j, q in enumerate(points):
            if i != j and all(a <= b for a, b in zip(q, p)) and any(a < b for a, b in zip(q, p)):
                beaten = True
                break
        if not beaten:
            keep.add(i)
    return keep


def union_area(points, reference) -> float:
    """Area of the union of boxes [p, reference] via coordinate compression."""
    xs = sorted({p[0] for p in points} | {reference[0]})
    ys = sorted({p[1] for p in points} | {reference[1]})
    area = 0.0
    for (x0, x1), (y0, y1) in itertools.product(zip(xs, xs[1:]), zip(ys, ys[1:])):
        if any(p[0] <= x0 and p[1] <= y0 for p in points):
            area += (x1 - x0) * (y1 - y0)
    return area


def hyperband_by_hand():
    """The (min 1, max 10, eta 3) bracket table worked out on paper.

    s_max = floor(log3 10) = 2.
    s=2: n = ceil(3/3 * 9) = 9 at 10/9 -> 1 epoch; keep 3 at 10/3 -> 3; keep 1 at 10.
    s=1: n = ceil(3/2 * 3) = 5 at 10/3 -> 3 epochs; keep floor(5/3) = 1 at 10.
    s=0: n = 3 at 10.
    """
    return [[(9, 1), (3, 3), (1, 10)], [(5, 3), (1, 10)], [(3, 10)]]


def isclose_or_both_none(a, b, tol=1e-12) -> bool:
    if a is None or (isinstance(a, float) and math.isnan(a)):
        return b is None or (isinstance(b, float) and math.isnan(b))
    return b is not None and abs(a - b) <= tol


def finite_difference_report(loss_fn, params: dict, h: float = 1e-5, floor: float = 1e-4):
    """Worst relative error between ``loss_fn``'s analytic gradients and central differences.

    ``loss_fn(params) -> (loss, grads)``. Every scalar of every parameter is
    perturbed. Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps exactly-zero gradients (where differencing only sees roundoff of
    order 1e-11) from dividing by nothing.
    """
    _, analytic = loss_fn(params)
    worst = {}
    for name, p in params.items():
        err = 0.0
        flat = p.reshape(-1)
        g = analytic[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, _ = loss_fn(params)
            flat[i] = old - h
            down, _ = loss_fn(params)
            flat[i] = old
            num = (up - down) / (2 * h)
            err = max(err, abs(g[i] - num) / max(abs(g[i]), abs(num), floor))
        worst[name] = err
    return worst

"""Accuracy and group-fairness metrics for binary predictions.

Group differences are signed *unprivileged minus privileged*, so a negative
statistical parity difference means the unprivileged group receives the
favorable prediction less often. Any metric whose denominator is zero is
reported as NaN and listed in :attr:`MetricVector.undefined`; it is never
silently replaced by zero.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

METRIC_NAMES = (
    "accuracy",
    "balanced_accuracy",
    "statistical_parity_difference",
    "disparate_impact",
    "average_odds_difference",
    "equal_opportunity_difference",
)
SIGNED_DIFFERENCES = (
    "statistical_parity_difference",
    "average_odds_difference",
    "equal_opportunity_difference",
)


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class GroupConfusion:
    privileged: Counts
    unprivileged: Counts

    @property
    def pooled(self) -> Counts:
        return self.privileged + self.unprivileged

    @property
    def n(self) -> int:
        return self.privileged.n + self.unprivileged.n

    def swapped(self) -> "GroupConfusion":
        return GroupConfusion(self.unprivileged, self.privileged)


@dataclass(frozen=True)
class MetricVector:
    accuracy: float
    balanced_accuracy: float
    statistical_parity_difference: float
    disparate_impact: float
    average_odds_difference: float
    equal_opportunity_difference: float
    selection_rate: float = float("nan")
    undefined: frozenset = field(default_factory=frozenset)

    def absolute(self, name: str) -> float:
        """|metric|; NaN stays NaN."""
        return abs(getattr(self, name))

    def is_defined(self, name: str) -> bool:
        return name not in self.undefined

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = sorted(self.undefined)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricVector":
        vals = {k: (float("nan") if d.get(k) is None else float(d[k])) for k in METRIC_NAMES + ("selection_rate",)}
        return cls(**vals, undefined=frozenset(d.get("undefined", ())))

    @classmethod
    def worst_case(cls) -> "MetricVector":
        """Placeholder for diverged trials: every metric undefined."""
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan, nan, undefined=frozenset(METRIC_NAMES))


def confusion(predictions, labels, protected) -> GroupConfusion:
    """Tally TP/FP/TN/FN separately for the privileged (1) and unprivileged (0) groups."""
    p = np.asarray(predictions).astype(np.int64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    s = np.asarray(protected).astype(np.int64).ravel()
    if not (len(p) == len(y) == len(s)):
        raise ValueError(f"length mismatch: predictions {len(p)}, labels {len(y)}, protected {len(s)}")
    if len(p) == 0:
        raise ValueError("empty inputs")
    for name, v in (("predictions", p), ("labels", y), ("protected", s)):
        if np.any((v != 0) & (v != 1)):
            raise ValueError(f"{name} must be binary")
    groups = []
    for g in (1, 0):
        m = s == g
        if not m.any():
            raise ValueError(f"{'privileged' if g else 'unprivileged'} group absent")
        pg, yg = p[m], y[m]
        groups.append(
            Counts(
                tp=int(np.sum((pg == 1) & (yg == 1))),
                fp=int(np.sum((pg == 1) & (yg == 0))),
                tn=int(np.sum((pg == 0) & (yg == 0))),
                fn=int(np.sum((pg == 0) & (yg == 1))),
            )
        )
    return GroupConfusion(privileged=groups[0], unprivileged=groups[1])


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else float("nan")


def evaluate(conf: GroupConfusion) -> MetricVector:
    pooled, priv, unpriv = conf.pooled, conf.privileged, conf.unprivileged

    tpr = _ratio(pooled.tp, pooled.tp + pooled.fn)
    tnr = _ratio(pooled.tn, pooled.tn + pooled.fp)
    sel_u = _ratio(unpriv.tp + unpriv.fp, unpriv.n)
    sel_p = _ratio(priv.tp + priv.fp, priv.n)
    tpr_u = _ratio(unpriv.tp, unpriv.tp + unpriv.fn)
    tpr_p = _ratio(priv.tp, priv.tp + priv.fn)
    fpr_u = _ratio(unpriv.fp, unpriv.fp + unpriv.tn)
    fpr_p = _ratio(priv.fp, priv.fp + priv.tn)

    values = {
        "accuracy": _ratio(pooled.tp + pooled.tn, pooled.n),
        "balanced_accuracy": 0.5 * (tpr + tnr),
        "statistical_parity_difference": sel_u - sel_p,
        "disparate_impact": _ratio(sel_u, sel_p) if not math.isnan(sel_p) else float("nan"),
        "average_odds_difference": 0.5 * ((fpr_u - fpr_p) + (tpr_u - tpr_p)),
        "equal_opportunity_difference": tpr_u - tpr_p,
    }
    undefined = frozenset(k for k, v in values.items() if math.isnan(v))
    return MetricVector(
        **values,
        selection_rate=_ratio(pooled.tp + pooled.fp, pooled.n),
        undefined=undefined,
    )


def metrics(predictions, labels, protected) -> MetricVector:
    """Shorthand for ``evaluate(confusion(...))``."""
    return evaluate(confusion(predictions, labels, protected))

"""Explanation fidelity, subgroup fidelity gaps and demographic parity.

Fidelity compares an explanation's outputs ``e`` with the blackbox outputs
``b`` it imitates. For the label-based metrics the reference label is the
blackbox output thresholded at 0.5:

* accuracy  -- agreement between thresholded ``b`` and thresholded ``e``
* auroc     -- ``e`` used as a score against thresholded ``b``
* mean_error -- signed mean of ``e - b``
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import (
    AllGroupsDegenerate,
    DegenerateMetric,
    FewerThanTwoGroups,
    SingleGroup,
)
from .stats import auroc

THRESHOLD = 0.5


class Metric(str, enum.Enum):
    ACCURACY = "accuracy"
    AUROC = "auroc"
    MEAN_ERROR = "mean_error"


ALL_METRICS = (Metric.ACCURACY, Metric.AUROC, Metric.MEAN_ERROR)


def binarize(p) -> np.ndarray:
    return (np.asarray(p, dtype=np.float64) >= THRESHOLD).astype(np.int8)


@dataclass(frozen=True)
class FidelityPairs:
    b: np.ndarray       # blackbox outputs in [0, 1]
    e: np.ndarray       # explanation outputs (real, may leave [0, 1])
    g: np.ndarray       # group codes

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).ravel()
        e = np.asarray(self.e, dtype=np.float64).ravel()
        g = np.asarray(self.g).ravel()
        if not (len(b) == len(e) == len(g)):
            raise ValueError("b, e and g must have equal lengths")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "g", g)

    def __len__(self):
        return len(self.b)

    @property
    def residual(self) -> np.ndarray:
        return self.e - self.b

    def subset(self, mask) -> "FidelityPairs":
        return FidelityPairs(self.b[mask], self.e[mask], self.g[mask])


def fidelity(pairs: FidelityPairs, metric: Metric | str) -> float:
    metric = Metric(metric)
    if len(pairs) == 0:
        raise ValueError("no evaluation points")
    if metric is Metric.MEAN_ERROR:
        return float(np.mean(pairs.e - pairs.b))
    labels = binarize(pairs.b)
    if metric is Metric.ACCURACY:
        return float(np.mean(labels == binarize(pairs.e)))
    return auroc(pairs.e, labels)  # SingleClass is a DegenerateMetric


def group_fidelities(pairs: FidelityPairs, metric) -> tuple[dict, list]:
    """Fidelity per group; groups whose metric is undefined are listed apart."""
    values, excluded = {}, []
    for grp in np.unique(pairs.g):
        try:
            values[int(grp)] = fidelity(pairs.subset(pairs.g == grp), metric)
        except DegenerateMetric:
            excluded.append(int(grp))
    return values, excluded


def max_gap_from_average(pairs: FidelityPairs, metric) -> tuple[float, int]:
    """Largest shortfall of a group's fidelity below the overall fidelity.

    Returns ``(gap, group)``; ties resolve to the lowest group id.
    """
    values, _ = group_fidelities(pairs, metric)
    if not values:
        raise AllGroupsDegenerate("metric undefined in every group")
    if len(values) < 2:
        raise FewerThanTwoGroups("need at least two groups with a defined metric")
    overall = fidelity(pairs, metric)
    gaps = {grp: overall - v for grp, v in sorted(values.items())}
    worst = max(gaps, key=lambda k: (gaps[k], -k))
    return float(gaps[worst]), worst


def pairwise_mean_abs(values) -> float:
    vals = list(values)
    if len(vals) < 2:
        raise FewerThanTwoGroups("need at least two groups with a defined metric")
    G = len(vals)
    total = sum(abs(a - b) for a, b in combinations(vals, 2))
    return float(2.0 * total / (G * (G - 1)))


def mean_pairwise_gap(pairs: FidelityPairs, metric) -> float:
    """Mean absolute fidelity difference over unordered pairs of groups."""
    values, _ = group_fidelities(pairs, metric)
    return pairwise_mean_abs(values[k] for k in sorted(values))


@dataclass
class GapReport:
    metric: str
    overall: float | None
    per_group: dict                     # group id -> fidelity
    delta: float | None                 # max gap from average
    argmax_group: int | None
    delta_group: float | None           # mean pairwise gap
    n_groups_used: int
    excluded: list = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["per_group"] = {str(k): v for k, v in self.per_group.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GapReport":
        d = dict(d)
        d["per_group"] = {int(k): v for k, v in d["per_group"].items()}
        return cls(**d)


def gap_report(b, e, g, metric) -> GapReport:
    """Overall fidelity, per-group fidelity and both gap statistics."""
    metric = Metric(metric)
    pairs = FidelityPairs(b, e, g)
    values, excluded = group_fidelities(pairs, metric)
    try:
        overall = fidelity(pairs, metric)
    except DegenerateMetric:
        overall = None
    if overall is None or len(values) < 2:
        err = "DegenerateMetric" if overall is None else (
            "AllGroupsDegenerate" if not values else "FewerThanTwoGroups")
        return GapReport(metric.value, overall, values, None, None, None, len(values),
                         excluded, err)
    delta, worst = max_gap_from_average(pairs, metric)
    return GapReport(metric.value, overall, values, delta, worst,
                     pairwise_mean_abs(values[k] for k in sorted(values)),
                     len(values), excluded)


# -- demographic parity -------------------------------------------------------

def _binary_groups(g):
    g = np.asarray(g)
    one, zero = g == 1, g == 0
    if not one.any() or not zero.any() or not np.all(one | zero):
        raise SingleGroup("need binary groups coded 0/1 with both present")
    return one, zero


def demographic_parity_gap(outputs, g) -> float:
    """Signed mean(outputs | g=1) - mean(outputs | g=0)."""
    outputs = np.asarray(outputs, dtype=np.float64)
    one, zero = _binary_groups(g)
    return float(outputs[one].mean() - outputs[zero].mean())


@dataclass(frozen=True)
class PreservationCheck:
    lhs: float      # DP(E) - DP(B)
    rhs: float      # mean residual | g=1  -  mean residual | g=0
    abs_diff: float
    dp_b: float
    dp_e: float


def preservation_check(pairs: FidelityPairs) -> PreservationCheck:
    """Compare the change in DP gap with the group difference in residuals.

    The two quantities agree for any pairs; a disagreement beyond rounding
    points to a bookkeeping error upstream.
    """
    dp_b = demographic_parity_gap(pairs.b, pairs.g)
    dp_e = demographic_parity_gap(pairs.e, pairs.g)
    one, zero = _binary_groups(pairs.g)
    eps = pairs.residual
    lhs = dp_e - dp_b
    rhs = float(eps[one].mean() - eps[zero].mean())
    return PreservationCheck(lhs, rhs, abs(lhs - rhs), dp_b, dp_e)

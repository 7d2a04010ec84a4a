"""Monte Carlo model of human decisions aided by explanations of varying fidelity.

A decision-maker sees a blackbox prediction and an explanation. Whether the
final decision is correct depends on whether the blackbox was right and
whether the explanation was good; an explanation is good with probability
equal to its group's fidelity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleFidelity

Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimParams:
    """P(decision correct | blackbox correctness, explanation quality)."""

    wrong_good: float = 0.6497
    wrong_poor: float = 0.68
    right_good: float = 0.9281
    right_poor: float = 0.90

    def __post_init__(self):
        for name in ("wrong_good", "wrong_poor", "right_good", "right_poor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def closed_form_accuracy(a: float, f: float, params: SimParams = SimParams()) -> float:
    """Expected decision accuracy for blackbox accuracy ``a`` and fidelity ``f``."""
    if not (0.0 <= a <= 1.0 and 0.0 <= f <= 1.0):
        raise ValueError("a and f must lie in [0, 1]")
    right = f * params.right_good + (1 - f) * params.right_poor
    wrong = f * params.wrong_good + (1 - f) * params.wrong_poor
    return a * right + (1 - a) * wrong


@dataclass(frozen=True)
class SimConfig:
    mode: str = "parametric"                # "parametric" | "dataset"
    group_accuracy: tuple = (0.8, 0.8)      # parametric: blackbox accuracy per group
    mean_fidelity: float = 0.85
    deltas: tuple = (0.0, 0.05, 0.10, 0.15)
    advantaged_group: int = 0               # receives mean_fidelity + delta
    runs: int = 20
    n_per_group: int = 20000                # parametric only
    prevalence: float = 0.5                 # parametric only: P(y = 1)
    seed: int = 0
    # dataset mode: blackbox predictions and groundtruth on a labeled split
    predictions: np.ndarray | None = field(default=None, compare=False)
    labels: np.ndarray | None = field(default=None, compare=False)
    groups: np.ndarray | None = field(default=None, compare=False)

    def fidelities(self, delta: float) -> tuple[float, float]:
        hi, lo = self.mean_fidelity + delta, self.mean_fidelity - delta
        if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
            raise InfeasibleFidelity(f"mean fidelity {self.mean_fidelity} +/- {delta} "
                                     "leaves [0, 1]")
        return (hi, lo) if self.advantaged_group == 0 else (lo, hi)


@dataclass
class SimResult:
    records: list           # dicts: delta, group, run, accuracy, f1
    summary: list           # dicts: delta, group, metric, mean, ci_lo, ci_hi, se
    gaps: dict              # delta -> mean accuracy(advantaged) - mean accuracy(other)

    def curve(self, group: int, metric: str = "accuracy") -> list[tuple[float, float]]:
        return [(r["delta"], r["mean"]) for r in self.summary
                if r["group"] == group and r["metric"] == metric]


def _f1(decision, y) -> float:
    tp = np.sum((decision == 1) & (y == 1))
    fp = np.sum((decision == 1) & (y == 0))
    fn = np.sum((decision == 0) & (y == 1))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def _decide(y, bb_correct, fidelity, params, rng):
    good = rng.random(len(y)) < fidelity
    p = np.where(bb_correct,
                 np.where(good, params.right_good, params.right_poor),
                 np.where(good, params.wrong_good, params.wrong_poor))
    correct = rng.random(len(y)) < p
    return np.where(correct, y, 1 - y), correct


def _run_streams(cfg: SimConfig, run: int):
    # one stream per (run, group); identical across deltas so sweeps share draws
    return [np.random.default_rng([cfg.seed, run, grp]) for grp in (0, 1)]


def simulate(cfg: SimConfig, params: SimParams = SimParams()) -> SimResult:
    if cfg.mode not in ("parametric", "dataset"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    if cfg.mode == "dataset":
        if cfg.predictions is None or cfg.labels is None or cfg.groups is None:
            raise ValueError("dataset mode needs predictions, labels and groups")
        y_all = np.asarray(cfg.labels).astype(np.int8)
        bb_all = (np.asarray(cfg.predictions) >= 0.5).astype(np.int8) == y_all
        g_all = np.asarray(cfg.groups)
        if set(np.unique(g_all)) != {0, 1}:
            raise ValueError("dataset mode needs exactly two groups coded 0/1")
    fids = {delta: cfg.fidelities(delta) for delta in cfg.deltas}
    records = []
    for delta in cfg.deltas:
        for run in range(cfg.runs):
            streams = _run_streams(cfg, run)
            for grp in (0, 1):
                rng = streams[grp]
                if cfg.mode == "parametric":
                    n = cfg.n_per_group
                    y = (rng.random(n) < cfg.prevalence).astype(np.int8)
                    bb = rng.random(n) < cfg.group_accuracy[grp]
                else:
                    m = g_all == grp
                    y, bb = y_all[m], bb_all[m]
                decision, correct = _decide(y, bb, fids[delta][grp], params, rng)
                records.append({"delta": float(delta), "group": grp, "run": run,
                                "accuracy": float(correct.mean()),
                                "f1": _f1(decision, y)})
    summary, gaps = [], {}
    for delta in cfg.deltas:
        means = {}
        for grp in (0, 1):
            for metric in ("accuracy", "f1"):
                vals = np.array([r[metric] for r in records
                                 if r["delta"] == delta and r["group"] == grp])
                mean = float(vals.mean())
                se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
                summary.append({"delta": float(delta), "group": grp, "metric": metric,
                                "mean": mean, "ci_lo": mean - Z95 * se,
                                "ci_hi": mean + Z95 * se, "se": se})
                if metric == "accuracy":
                    means[grp] = mean
        adv = cfg.advantaged_group
        gaps[float(delta)] = means[adv] - means[1 - adv]
    return SimResult(records, summary, gaps)

"""Rank statistics: AUROC and the one-sided Wilcoxon signed-rank test."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

from .errors import SingleClass

EXACT_MAX_N = 25


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Ties get average ranks, so a tied positive/negative pair counts 1/2.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _signed_rank_stat(x):
    x = np.asarray(x, dtype=np.float64)
    x = x[x != 0]
    if x.size == 0:
        return None, None
    # doubled average ranks are integers, which keeps the exact null countable
    r2 = np.rint(2 * rankdata(np.abs(x))).astype(np.int64)
    return r2, int(r2[x > 0].sum())


def _exact_upper_tail(r2: np.ndarray, w2: int) -> float:
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)  # at most 2**25 per cell
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return float(counts[w2:].sum() / 2.0 ** len(r2))


def wilcoxon_one_sided(samples) -> float:
    """p-value for H1: median of ``samples`` > 0.

    Exact zeros are dropped. For n <= 25 the null distribution of W+ is
    enumerated exactly; above that a tie-corrected normal approximation with
    continuity correction is used. All-zero input returns 1.
    """
    r2, w2 = _signed_rank_stat(samples)
    if r2 is None:
        return 1.0
    n = len(r2)
    if n <= EXACT_MAX_N:
        return _exact_upper_tail(r2, w2)
    ranks = r2 / 2.0
    w = w2 / 2.0
    mean = n * (n + 1) / 4.0
    var = float((ranks ** 2).sum()) / 4.0
    z = (w - mean - 0.5) / math.sqrt(var)
    return float(norm.sf(z))

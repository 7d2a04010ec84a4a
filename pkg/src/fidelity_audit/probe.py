"""How much protected-group information do the features carry?"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .blackbox import stratified_folds, train_logistic
from .errors import AllFeaturesDropped, NonConvergence, SingleGroup
from .stats import auroc

MI_BINS = 10
DEFAULT_MI_THRESHOLD = 1e-3


def group_probe(X, g, folds: int = 5, seed: int = 0, l2_strength: float = 1e-4) -> dict:
    """Out-of-fold AUROC of a one-vs-rest logistic probe, per group.

    Groups with fewer members than ``folds`` get ``None``.
    """
    X = np.asarray(X, dtype=np.float64)
    g = np.asarray(g)
    groups = np.unique(g)
    if len(groups) < 2:
        raise SingleGroup("probe needs at least two groups")
    out = {}
    for grp in groups:
        target = (g == grp).astype(np.int8)
        if min(target.sum(), len(target) - target.sum()) < folds:
            out[int(grp)] = None
            continue
        scores = np.empty(len(g))
        for k, test_idx in enumerate(stratified_folds(target, folds, seed)):
            train_idx = np.setdiff1d(np.arange(len(g)), test_idx)
            if X.shape[1] == 0:
                scores[test_idx] = target[train_idx].mean()
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NonConvergence)
                model = train_logistic(X[train_idx], target[train_idx], l2_strength)
            scores[test_idx] = model.predict_proba(X[test_idx])
        out[int(grp)] = auroc(scores, target)
    return out


def discretize(x, bins: int = MI_BINS) -> np.ndarray:
    """Quantile-bin a continuous column; columns with few values stay as-is."""
    x = np.asarray(x, dtype=np.float64)
    values = np.unique(x)
    if len(values) <= bins:
        return np.searchsorted(values, x)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) between two discrete arrays."""
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


@dataclass(frozen=True)
class FilterResult:
    data: object                # reduced EncodedDataset (or ndarray)
    kept: list
    dropped: list
    mi: dict                    # column name -> MI in nats


def mi_filter(data, g=None, threshold: float = DEFAULT_MI_THRESHOLD,
              bins: int = MI_BINS) -> FilterResult:
    """Keep only features whose mutual information with the group is <= threshold.

    ``data`` is an EncodedDataset (groups taken from it unless ``g`` is given)
    or a plain matrix, in which case every column is binned when it has more
    than ``bins`` distinct values.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if hasattr(data, "X"):
        X, names = data.X, data.columns
        g = data.g if g is None else g
        continuous = data.continuous_mask()
    else:
        X = np.asarray(data, dtype=np.float64)
        names = [f"x{j}" for j in range(X.shape[1])]
        continuous = np.ones(X.shape[1], dtype=bool)
    mi, kept, dropped = {}, [], []
    for j, name in enumerate(names):
        col = discretize(X[:, j], bins) if continuous[j] else X[:, j]
        mi[name] = mutual_information(col, g)
        (kept if mi[name] <= threshold else dropped).append(j)
    if not kept:
        warnings.warn("mutual-information filter dropped every feature", stacklevel=2)
        raise AllFeaturesDropped(f"no feature has MI <= {threshold}")
    reduced = data.select_features(kept) if hasattr(data, "X") else X[:, kept]
    return FilterResult(reduced, [names[j] for j in kept], [names[j] for j in dropped], mi)

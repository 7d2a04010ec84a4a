"""Synthetic two-group datasets with known structure."""
from __future__ import annotations

import numpy as np

from .data import Dataset, dataset_from_arrays


def linear(n: int = 2000, d: int = 10, seed: int = 0, noise: float = 0.0) -> Dataset:
    """Labels from a fixed hyperplane; ``noise`` flips that fraction of labels."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w = np.linspace(1.0, -1.0, d) + 0.5
    y = (X @ w > 0).astype(np.int8)
    if noise > 0:
        flip = rng.random(n) < noise
        y[flip] = 1 - y[flip]
    g = rng.integers(0, 2, n)
    return dataset_from_arrays(X, y, g)


def xor(n: int = 2000, seed: int = 0) -> Dataset:
    """Two informative features combined by sign agreement, plus two nuisance features."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(np.int8)
    g = rng.integers(0, 2, n)
    return dataset_from_arrays(X, y, g)


def two_regime(n: int = 3000, seed: int = 0, extra: int = 2, radius2: float = 3.36) -> Dataset:
    """Group 0 follows a half-plane rule, group 1 a ball in four dimensions.

    Column ``x0`` is shifted by group (N(-1.5, 0.7) vs N(1.5, 0.7)) so the
    blackbox can tell the regimes apart; ``x1..x4`` drive the labels and
    ``extra`` more columns are pure noise. The ball radius puts about half
    of group 1 inside it.
    """
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 2, n)
    x0 = np.where(g == 1, 1.5, -1.5) + 0.7 * rng.normal(size=n)
    Z = rng.normal(size=(n, 4 + extra))
    plane = Z[:, 0] + Z[:, 1] > 0
    ball = (Z[:, :4] ** 2).sum(axis=1) < radius2
    y = np.where(g == 1, ball, plane).astype(np.int8)
    return dataset_from_arrays(np.column_stack([x0, Z]), y, g)


def group_leak(n: int = 40000, seed: int = 0, extra: int = 2) -> Dataset:
    """Like :func:`two_regime` but the group is a deterministic function of ``x0``.

    ``x0 = +-(1 + |N(0, 0.5)|)`` with the sign set by the group, so the groups
    sit on either side of a margin and a linear probe recovers them
    perfectly. The remaining columns are independent of the group.
    """
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 2, n)
    x0 = (2 * g - 1) * (1.0 + 0.5 * np.abs(rng.normal(size=n)))
    Z = rng.normal(size=(n, 4 + extra))
    plane = Z[:, 0] + Z[:, 1] > 0
    ball = (Z[:, :4] ** 2).sum(axis=1) < 3.36
    y = np.where(g == 1, ball, plane).astype(np.int8)
    return dataset_from_arrays(np.column_stack([x0, Z]), y, g)


GENERATORS = {
    "linear": linear,
    "xor": xor,
    "two_regime": two_regime,
    "group_leak": group_leak,
}

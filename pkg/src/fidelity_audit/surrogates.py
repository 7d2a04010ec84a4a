"""Global surrogates of a blackbox: a Gini decision tree and an additive model.

Both are trained on blackbox outputs thresholded at 0.5 (the additive model
can also take the raw probabilities as soft targets).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import expit

from .errors import NonConvergence, SchemaMismatch, SingleClass
from .metrics import binarize
from .stats import auroc

TREE_DEPTHS = tuple(range(3, 11))
DEFAULT_MIN_LEAF = 5
DEFAULT_BINS = 32
DEFAULT_RIDGE = 1e-6
DEFAULT_SMOOTH = 1e-4


def _features(data):
    """Matrix and column blocks from an EncodedDataset or a bare array."""
    if hasattr(data, "X"):
        return np.asarray(data.X, dtype=np.float64), data.blocks(), data.continuous_mask()
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    return X, [[j] for j in range(X.shape[1])], np.ones(X.shape[1], dtype=bool)


def blackbox_targets(predictor, X, soft: bool = False) -> np.ndarray:
    f = getattr(predictor, "predict_proba", predictor)
    p = np.asarray(f(X), dtype=np.float64)
    return p if soft else binarize(p).astype(np.float64)


# -- decision tree -------------------------------------------------------------

@dataclass(frozen=True)
class TreeSurrogate:
    """Flat binary tree; ``feature == -1`` marks a leaf. Left child takes x <= threshold."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n: np.ndarray
    n_pos: np.ndarray
    depth: np.ndarray
    n_features: int
    max_depth: int | None
    min_leaf: int

    @property
    def prob(self) -> np.ndarray:
        return self.n_pos / self.n

    @property
    def actual_depth(self) -> int:
        return int(self.depth[self.feature == -1].max())

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != -1
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] != -1
        return node

    def predict_proba(self, X) -> np.ndarray:
        _check_width(X, self.n_features)
        return self.prob[self.apply(X)]

    def truncate(self, max_depth: int) -> "TreeSurrogate":
        """The tree greedy growth would have produced with a smaller depth cap."""
        keep, remap = [], {}
        stack = [0]
        while stack:
            i = stack.pop()
            remap[i] = len(keep)
            keep.append(i)
            if self.feature[i] != -1 and self.depth[i] < max_depth:
                stack.extend([self.right[i], self.left[i]])
        keep = np.array(keep)
        internal = (self.feature[keep] != -1) & (self.depth[keep] < max_depth)
        feature = np.where(internal, self.feature[keep], -1)
        left = np.array([remap[self.left[i]] if m else -1 for i, m in zip(keep, internal)])
        right = np.array([remap[self.right[i]] if m else -1 for i, m in zip(keep, internal)])
        return TreeSurrogate(feature, np.where(internal, self.threshold[keep], np.nan),
                             left, right, self.n[keep], self.n_pos[keep], self.depth[keep],
                             self.n_features, max_depth, self.min_leaf)

    def to_dict(self) -> dict:
        def node(i):
            rec = {"n": int(self.n[i]), "n_pos": int(self.n_pos[i])}
            if self.feature[i] == -1:
                rec["leaf"] = float(self.prob[i])
            else:
                rec.update(feature=int(self.feature[i]), threshold=float(self.threshold[i]),
                           left=node(self.left[i]), right=node(self.right[i]))
            return rec

        return {"kind": "tree", "n_features": self.n_features, "max_depth": self.max_depth,
                "min_leaf": self.min_leaf, "root": node(0)}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeSurrogate":
        cols = {k: [] for k in ("feature", "threshold", "left", "right", "n", "n_pos", "depth")}

        def add(rec, depth):
            i = len(cols["n"])
            for k in cols:
                cols[k].append(-1)
            cols["n"][i], cols["n_pos"][i], cols["depth"][i] = rec["n"], rec["n_pos"], depth
            if "leaf" in rec:
                cols["threshold"][i] = np.nan
            else:
                cols["feature"][i], cols["threshold"][i] = rec["feature"], rec["threshold"]
                cols["left"][i] = add(rec["left"], depth + 1)
                cols["right"][i] = add(rec["right"], depth + 1)
            return i

        add(d["root"], 0)
        arr = {k: np.array(v, dtype=np.float64 if k == "threshold" else np.int64)
               for k, v in cols.items()}
        return cls(**arr, n_features=d["n_features"], max_depth=d["max_depth"],
                   min_leaf=d["min_leaf"])


def _best_split(X, y, min_leaf):
    """(feature, threshold, impurity decrease) of the best Gini split, or None."""
    n = len(y)
    pos = y.sum()
    parent = 2.0 * pos * (n - pos) / n  # n * gini
    best = None
    left_n = np.arange(1, n)
    right_n = n - left_n
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        cpos = np.cumsum(ys)[:-1]
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not valid.any():
            continue
        lp, rp = cpos, pos - cpos
        child = 2.0 * lp * (left_n - lp) / left_n + 2.0 * rp * (right_n - rp) / right_n
        child = np.where(valid, child, np.inf)
        i = int(np.argmin(child))
        gain = parent - child[i]
        if gain <= 1e-12 * n:
            continue
        if best is None or gain > best[2] + 1e-12 * n:
            a, b = xs[i], xs[i + 1]
            thr = a + (b - a) / 2.0
            if not a <= thr < b:
                thr = a
            best = (j, thr, gain)
    return best


def fit_tree(X, y, max_depth: int | None = None, min_leaf: int = DEFAULT_MIN_LEAF) -> TreeSurrogate:
    """Greedy CART on binary labels.

    Split ties go to the lowest feature index, then the lowest threshold.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("training set is empty")
    cap = np.inf if max_depth is None else max_depth
    nodes = []  # feature, threshold, left, right, n, n_pos, depth
    stack = [(np.arange(len(y)), 0, None, None)]
    while stack:
        idx, depth, parent, side = stack.pop()
        i = len(nodes)
        n, n_pos = len(idx), int(y[idx].sum())
        nodes.append([-1, np.nan, -1, -1, n, n_pos, depth])
        if parent is not None:
            nodes[parent][2 if side == "L" else 3] = i
        if depth >= cap or n_pos in (0, n) or n < 2 * min_leaf:
            continue
        found = _best_split(X[idx], y[idx], min_leaf)
        if found is None:
            continue
        j, thr, _ = found
        nodes[i][0], nodes[i][1] = j, thr
        go_left = X[idx, j] <= thr
        stack.append((idx[~go_left], depth + 1, i, "R"))
        stack.append((idx[go_left], depth + 1, i, "L"))
    cols = list(zip(*nodes))
    ints = [None if k == 1 else np.array(c, dtype=np.int64) for k, c in enumerate(cols)]
    return TreeSurrogate(ints[0], np.array(cols[1], dtype=np.float64), ints[2], ints[3],
                         ints[4], ints[5], ints[6], X.shape[1], max_depth, min_leaf)


def fit_tree_surrogate(predictor, train, max_depth: int | None = None,
                       min_leaf: int = DEFAULT_MIN_LEAF) -> TreeSurrogate:
    X, _, _ = _features(train)
    return fit_tree(X, blackbox_targets(predictor, X), max_depth, min_leaf)


def _valid_score(pred, targets):
    try:
        return auroc(pred, targets)
    except SingleClass:
        return float(np.mean(binarize(pred) == targets))


def tune_tree_surrogate(predictor, train, valid, depths=TREE_DEPTHS,
                        min_leaf: int = DEFAULT_MIN_LEAF) -> tuple[TreeSurrogate, dict]:
    """Pick the depth with the best validation fidelity AUROC (ties: shallower)."""
    depths = sorted(depths)
    full = fit_tree_surrogate(predictor, train, max(depths), min_leaf)
    Xv, _, _ = _features(valid)
    tv = blackbox_targets(predictor, Xv)
    scores = {}
    for depth in depths:
        scores[depth] = _valid_score(full.truncate(depth).predict_proba(Xv), tv)
    best = max(depths, key=lambda dep: (scores[dep], -dep))
    return full.truncate(best), scores


# -- additive model --------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One shape function: piecewise linear in a column, or a one-hot block.

    A continuous term holds its values at ``knots`` and interpolates linearly
    between them, staying flat beyond the outer knots. A one-hot term holds
    one value per level.
    """

    columns: tuple[int, ...]
    knots: np.ndarray | None    # None for one-hot blocks

    @property
    def size(self) -> int:
        return len(self.columns) if self.knots is None else len(self.knots)

    def basis(self, X):
        """Per-row (left index, right index, right weight) of the interpolation."""
        X = np.atleast_2d(X)
        if self.knots is None:
            i0 = np.argmax(X[:, list(self.columns)], axis=1)
            return i0, i0, np.zeros(len(X))
        k = self.knots
        x = X[:, self.columns[0]]
        if len(k) == 1:
            zero = np.zeros(len(X), dtype=np.int64)
            return zero, zero, np.zeros(len(X))
        i0 = np.clip(np.searchsorted(k, x, side="right") - 1, 0, len(k) - 2)
        w = np.clip((x - k[i0]) / (k[i0 + 1] - k[i0]), 0.0, 1.0)
        return i0, i0 + 1, w

    def evaluate(self, shape, X) -> np.ndarray:
        i0, i1, w = self.basis(X)
        return (1 - w) * shape[i0] + w * shape[i1]


def _make_terms(X, blocks, continuous, bins) -> list[Term]:
    terms = []
    for block in blocks:
        if len(block) > 1:
            terms.append(Term(tuple(block), None))
            continue
        j = block[0]
        x = X[:, j]
        values = np.unique(x)
        if continuous[j] and len(values) > bins + 1:
            knots = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)))
        else:
            knots = values
        terms.append(Term((j,), knots))
    return terms


@dataclass(frozen=True)
class AdditiveSurrogate:
    intercept: float
    terms: tuple[Term, ...]
    shapes: tuple[np.ndarray, ...]
    n_features: int
    converged: bool = True
    history: tuple = field(default=(), compare=False)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        _check_width(X, self.n_features)
        z = np.full(len(X), self.intercept)
        for term, shape in zip(self.terms, self.shapes):
            z += term.evaluate(shape, X)
        return z

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "kind": "additive",
            "n_features": self.n_features,
            "intercept": self.intercept,
            "converged": self.converged,
            "terms": [{"columns": list(t.columns),
                       "knots": None if t.knots is None else t.knots.tolist(),
                       "values": s.tolist()} for t, s in zip(self.terms, self.shapes)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdditiveSurrogate":
        terms = tuple(Term(tuple(t["columns"]),
                           None if t["knots"] is None else np.asarray(t["knots"], dtype=float))
                      for t in d["terms"])
        shapes = tuple(np.asarray(t["values"], dtype=float) for t in d["terms"])
        return cls(d["intercept"], terms, shapes, d["n_features"], d.get("converged", True))


def _mean_log_loss(z, y):
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _banded_gram(i0, i1, w, weights, size):
    """Bands of sum_i weights_i * b_i b_i' for the two-point basis rows b_i."""
    diag = (np.bincount(i0, weights * (1 - w) ** 2, size)
            + np.bincount(i1, weights * w ** 2, size))
    off = np.bincount(i0, weights * (1 - w) * w, size)[:-1] if size > 1 else np.zeros(0)
    return diag, off


def _slope_change_matrix(knots) -> np.ndarray:
    """Rows give the change in slope at each interior knot.

    Row i is ``(f[i+1]-f[i])/h[i] - (f[i]-f[i-1])/h[i-1]``, so it vanishes
    exactly for shapes linear in x however the knots are spaced.
    """
    k = len(knots)
    h = np.diff(knots)
    D = np.zeros((max(k - 2, 0), k))
    for r in range(k - 2):
        D[r, r] = 1.0 / h[r]
        D[r, r + 1] = -1.0 / h[r] - 1.0 / h[r + 1]
        D[r, r + 2] = 1.0 / h[r + 1]
    return D


def _term_penalty(fx, f, D, ridge, smooth):
    """ridge * mean f(x)^2 + smooth * sum of squared slope changes."""
    val = ridge * float(np.mean(fx ** 2))
    if D is not None and len(D):
        val += smooth * float(np.sum((D @ f) ** 2))
    return val


def _newton_step(basis, resid, curv, f, D, n, ridge, smooth):
    """Newton direction for one shape; the system is pentadiagonal at most."""
    i0, i1, w = basis
    k = len(f)
    grad = np.bincount(i0, resid * (1 - w), k) + np.bincount(i1, resid * w, k)
    h_main, h_off = _banded_gram(i0, i1, w, curv, k)
    g_main, g_off = _banded_gram(i0, i1, w, np.ones(len(w)), k)
    main = h_main + 2 * ridge * g_main + 1e-10
    first = h_off + 2 * ridge * g_off
    second = np.zeros(max(k - 2, 0))
    fx_sum_grad = np.zeros(k)
    fx_sum_grad += g_main * f
    if k > 1:
        fx_sum_grad[:-1] += g_off * f[1:]
        fx_sum_grad[1:] += g_off * f[:-1]
    grad = grad + 2 * ridge * fx_sum_grad
    if D is not None and k > 2:
        lam = 2 * n * smooth
        DtD = D.T @ D
        main = main + lam * np.diag(DtD)
        first = first + lam * np.diag(DtD, 1)
        second = second + lam * np.diag(DtD, 2)
        grad = grad + lam * (DtD @ f)
    ab = np.zeros((5, k))
    ab[2] = main
    if k > 1:
        ab[1, 1:] = first
        ab[3, :-1] = first
    if k > 2:
        ab[0, 2:] = second
        ab[4, :-2] = second
    return solve_banded((2, 2), ab, grad)


def fit_additive(X, y, blocks=None, continuous=None, bins: int = DEFAULT_BINS,
                 ridge: float = DEFAULT_RIDGE, smooth: float = DEFAULT_SMOOTH,
                 max_cycles: int = 50, tol: float = 1e-6) -> AdditiveSurrogate:
    """Logistic additive model by cyclic backfitting with Newton steps per shape.

    Minimizes mean log-loss plus, for every shape f, ``ridge`` * mean f(x)^2
    and (continuous terms only) ``smooth`` * sum of squared slope changes at
    the interior knots, which leaves linear shapes unpenalized. ``bins`` is
    the number of quantile intervals between knots.
    ``y`` may hold hard (0/1) or soft targets in [0, 1]. Each shape function
    is re-centered to mean zero over the training rows after its update,
    which never increases the objective.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    blocks = [[j] for j in range(d)] if blocks is None else blocks
    continuous = np.ones(d, dtype=bool) if continuous is None else np.asarray(continuous)
    terms = _make_terms(X, blocks, continuous, bins)
    bases = [t.basis(X) for t in terms]
    diffs = [None if t.knots is None else _slope_change_matrix(t.knots) for t in terms]
    shapes = [np.zeros(t.size) for t in terms]
    contrib = [np.zeros(n) for _ in terms]
    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    intercept = float(np.log(ybar / (1 - ybar)))
    z = np.full(n, intercept)
    pen = np.zeros(len(terms))
    loss = _mean_log_loss(z, y)
    history = [loss]
    converged = False
    for _ in range(max_cycles):
        start = loss
        # unpenalized Newton step on the intercept
        p = expit(z)
        step0 = float(np.sum(p - y) / (np.sum(p * (1 - p)) + 1e-12))
        scale = 1.0
        while scale >= 1e-8:
            new = _mean_log_loss(z - scale * step0, y) + pen.sum()
            if new <= loss:
                z = z - scale * step0
                intercept -= scale * step0
                loss = new
                break
            scale *= 0.5
        for t, basis in enumerate(bases):
            p = expit(z)
            f = shapes[t]
            step = _newton_step(basis, p - y, p * (1 - p), f, diffs[t], n, ridge, smooth)
            i0, i1, w = basis
            step_x = (1 - w) * step[i0] + w * step[i1]
            others = pen.sum() - pen[t]
            scale = 1.0
            while True:
                cand_f = f - scale * step
                cand_x = contrib[t] - scale * step_x
                cand_pen = _term_penalty(cand_x, cand_f, diffs[t], ridge, smooth)
                new = _mean_log_loss(z - scale * step_x, y) + others + cand_pen
                if new <= loss or scale < 1e-8:
                    break
                scale *= 0.5
            if new > loss:
                continue
            z = z - scale * step_x
            # basis rows sum to one, so a constant shift moves f(x) by that constant
            center = float(cand_x.mean())
            shapes[t] = cand_f - center
            contrib[t] = cand_x - center
            intercept += center
            pen[t] = _term_penalty(contrib[t], shapes[t], diffs[t], ridge, smooth)
            loss = _mean_log_loss(z, y) + pen.sum()
        history.append(loss)
        if start - loss < tol:
            converged = True
            break
    if not converged:
        warnings.warn("backfitting hit the cycle cap", NonConvergence, stacklevel=2)
    return AdditiveSurrogate(intercept, tuple(terms), tuple(shapes), d, converged,
                             tuple(history))


def fit_additive_surrogate(predictor, train, bins: int = DEFAULT_BINS,
                           soft_targets: bool = False, **kwargs) -> AdditiveSurrogate:
    X, blocks, continuous = _features(train)
    y = blackbox_targets(predictor, X, soft=soft_targets)
    return fit_additive(X, y, blocks, continuous, bins, **kwargs)


# -- shared ------------------------------------------------------------------------

def _check_width(X, d):
    X = np.atleast_2d(np.asarray(X))
    if X.shape[1] != d:
        raise SchemaMismatch(f"expected {d} encoded features, got {X.shape[1]}")


def surrogate_predict(surrogate, X) -> np.ndarray:
    return surrogate.predict_proba(X)


def surrogate_to_dict(surrogate) -> dict:
    return surrogate.to_dict()


def surrogate_from_dict(d: dict):
    if d.get("kind") == "tree":
        return TreeSurrogate.from_dict(d)
    if d.get("kind") == "additive":
        return AdditiveSurrogate.from_dict(d)
    raise ValueError(f"unknown surrogate kind {d.get('kind')!r}")

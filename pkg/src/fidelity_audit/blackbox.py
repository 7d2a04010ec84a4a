"""Blackbox classifiers: L2 logistic regression and a one-hidden-layer MLP."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import NonConvergence, SingleClass, UnsupportedFormat
from .stats import auroc

FORMAT_VERSION = 1
THRESHOLD = 0.5

# grid values as used in the tuning sweep
LOGISTIC_GRID = [{"l2_strength": float(v)} for v in np.linspace(1e-5, 1.0, 25)]
MLP_GRID = [{"hidden_units": h} for h in (50, 100, 200)]

MLP_DEFAULTS = {
    "learning_rate": 1e-3,
    "batch_size": 32,
    "alpha": 1e-4,        # L2 penalty on weights
    "tol": 1e-4,
    "n_iter_no_change": 10,
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
}


@dataclass(frozen=True)
class Predictor:
    family: str                 # "logistic" | "mlp"
    params: dict                # name -> ndarray
    config: dict = field(default_factory=dict)
    converged: bool = True
    history: tuple = ()         # training loss per iteration / epoch

    def __post_init__(self):
        for v in self.params.values():
            v.setflags(write=False)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        p = self.params
        if self.family == "logistic":
            return X @ p["coef"] + p["intercept"][0]
        h = np.maximum(X @ p["W1"] + p["b1"], 0.0)
        return h @ p["w2"] + p["b2"][0]

    def predict_proba(self, X) -> np.ndarray:
        """Probability of the positive class, shape (n,)."""
        return expit(self.decision_function(X))

    __call__ = predict_proba

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= THRESHOLD).astype(np.int8)

    @property
    def n_features(self) -> int:
        key = "coef" if self.family == "logistic" else "W1"
        return self.params[key].shape[0]


def _check_classes(y):
    y = np.asarray(y)
    if y.min() == y.max():
        raise SingleClass("training labels contain a single class")


def _log_loss(z, y):
    # mean binary cross-entropy from logits, numerically stable
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def train_logistic(X, y, l2_strength: float = 1e-4, seed: int = 0,
                   max_iter: int = 100, tol: float = 1e-6) -> Predictor:
    """Minimize mean log-loss + l2/2 * ||coef||^2 by damped Newton steps.

    The intercept is not penalized. ``seed`` is recorded only; the solver is
    deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_classes(y)
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    reg = np.full(d + 1, float(l2_strength))
    reg[-1] = 0.0

    def objective(beta):
        return _log_loss(A @ beta, y) + 0.5 * float(np.sum(reg * beta * beta))

    beta = np.zeros(d + 1)
    p0 = y.mean()
    beta[-1] = np.log(p0 / (1 - p0))
    loss = objective(beta)
    history = [loss]
    converged = False
    for _ in range(max_iter):
        p = expit(A @ beta)
        grad = A.T @ (p - y) / n + reg * beta
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        s = p * (1 - p)
        H = (A * s[:, None]).T @ A / n + np.diag(reg)
        H[np.diag_indices_from(H)] += 1e-12
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            cand = beta - t * step
            new = objective(cand)
            if new <= loss or t < 1e-10:
                break
            t *= 0.5
        if new > loss:
            break  # no descent left at machine precision
        beta, loss = cand, new
        history.append(loss)
    if not converged:
        p = expit(A @ beta)
        grad = A.T @ (p - y) / n + reg * beta
        converged = bool(np.linalg.norm(grad) < tol)
    if not converged:
        warnings.warn(f"logistic fit did not reach gradient norm {tol}",
                      NonConvergence, stacklevel=2)
    params = {"coef": beta[:-1].copy(), "intercept": beta[-1:].copy()}
    config = {"l2_strength": float(l2_strength), "seed": int(seed)}
    return Predictor("logistic", params, config, converged, tuple(history))


def _init_mlp(d, hidden, rng):
    # Glorot-uniform, as in common MLP defaults
    b1 = np.sqrt(6.0 / (d + hidden))
    b2 = np.sqrt(6.0 / (hidden + 1))
    return {
        "W1": rng.uniform(-b1, b1, size=(d, hidden)),
        "b1": rng.uniform(-b1, b1, size=hidden),
        "w2": rng.uniform(-b2, b2, size=hidden),
        "b2": rng.uniform(-b2, b2, size=1),
    }


def train_mlp(X, y, hidden_units: int = 100, epochs: int = 200, seed: int = 0,
              **overrides) -> Predictor:
    """One ReLU hidden layer, sigmoid output, Adam on mini-batches.

    Training stops early when the epoch loss has not improved by ``tol`` for
    ``n_iter_no_change`` consecutive epochs; otherwise it runs ``epochs``
    epochs and is flagged as not converged.
    """
    if hidden_units < 1:
        raise ValueError("hidden_units must be >= 1")
    cfg = {**MLP_DEFAULTS, **overrides}
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_classes(y)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    P = _init_mlp(d, hidden_units, rng)
    m = {k: np.zeros_like(v) for k, v in P.items()}
    v = {k: np.zeros_like(v) for k, v in P.items()}
    lr, b1, b2, eps = cfg["learning_rate"], cfg["beta1"], cfg["beta2"], cfg["eps"]
    alpha, bs = cfg["alpha"], int(cfg["batch_size"])
    t = 0
    best, stall = np.inf, 0
    history = []
    converged = epochs == 0
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb, yb = X[idx], y[idx]
            pre = xb @ P["W1"] + P["b1"]
            h = np.maximum(pre, 0.0)
            z = h @ P["w2"] + P["b2"][0]
            total += float(np.sum(np.logaddexp(0.0, z) - yb * z))
            dz = (expit(z) - yb) / len(idx)
            dh = np.outer(dz, P["w2"]) * (pre > 0)
            grads = {
                "W1": xb.T @ dh + alpha * P["W1"] / len(idx),
                "b1": dh.sum(axis=0),
                "w2": h.T @ dz + alpha * P["w2"] / len(idx),
                "b2": np.array([dz.sum()]),
            }
            t += 1
            corr = np.sqrt(1 - b2 ** t) / (1 - b1 ** t)
            for k in P:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                P[k] = P[k] - lr * corr * m[k] / (np.sqrt(v[k]) + eps)
        loss = total / n + 0.5 * alpha * (np.sum(P["W1"] ** 2) + np.sum(P["w2"] ** 2)) / n
        history.append(loss)
        if loss > best - cfg["tol"]:
            stall += 1
        else:
            stall = 0
        best = min(best, loss)
        if stall >= cfg["n_iter_no_change"]:
            converged = True
            break
    if not converged:
        warnings.warn(f"MLP training hit the {epochs}-epoch cap", NonConvergence,
                      stacklevel=2)
    config = {"hidden_units": int(hidden_units), "epochs": int(epochs), "seed": int(seed),
              **{k: cfg[k] for k in ("learning_rate", "batch_size", "alpha")}}
    return Predictor("mlp", P, config, converged, tuple(history))


def train(family: str, X, y, config: dict, seed: int = 0) -> Predictor:
    if family == "logistic":
        return train_logistic(X, y, seed=seed, **config)
    if family == "mlp":
        return train_mlp(X, y, seed=seed, **config)
    raise ValueError(f"unknown blackbox family {family!r}")


def stratified_folds(y, folds: int, seed: int) -> list[np.ndarray]:
    """Assign each row to one of ``folds`` folds, balancing classes."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold_of[idx] = np.arange(len(idx)) % folds
    return [np.flatnonzero(fold_of == f) for f in range(folds)]


@dataclass(frozen=True)
class GridResult:
    predictor: Predictor
    best_index: int
    scores: tuple[float, ...]   # mean CV AUROC per config


def cv_auroc(family, X, y, config, folds=5, seed=0) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    scores = []
    for k, test_idx in enumerate(stratified_folds(y, folds, seed)):
        train_idx = np.setdiff1d(np.arange(len(y)), test_idx)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergence)
            model = train(family, X[train_idx], y[train_idx], config, seed=seed + k)
        scores.append(auroc(model.predict_proba(X[test_idx]), y[test_idx]))
    return float(np.mean(scores))


def grid_search(family: str, X, y, grid: list[dict] | None = None, folds: int = 5,
                seed: int = 0) -> GridResult:
    """Pick the config with the best mean k-fold AUROC, then refit on all rows.

    Ties go to the earliest config in ``grid``.
    """
    if grid is None:
        grid = LOGISTIC_GRID if family == "logistic" else MLP_GRID
    if not grid:
        raise ValueError("grid must be nonempty")
    if len(grid) == 1:
        scores = (float("nan"),)
        best = 0
    else:
        scores = tuple(cv_auroc(family, X, y, cfg, folds, seed) for cfg in grid)
        best = int(np.argmax(scores))  # first maximum
    model = train(family, X, y, grid[best], seed=seed)
    return GridResult(model, best, scores)


# -- evaluation -------------------------------------------------------------

@dataclass
class PerformanceReport:
    auroc: float | None
    accuracy: float
    brier: float
    group_auroc: dict
    group_accuracy: dict
    dp_gap: float                 # |DP| of thresholded predictions
    gaps: dict                    # metric -> {"delta": .., "delta_group": ..}
    degenerate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def eval_blackbox(predictor, X, y, g) -> PerformanceReport:
    """Groundtruth performance overall and per group, at threshold 0.5."""
    from .metrics import Metric, gap_report

    predict = getattr(predictor, "predict_proba", predictor)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    g = np.asarray(g)
    if len(y) == 0:
        raise ValueError("evaluation rows are empty")
    p = np.asarray(predict(X), dtype=np.float64)
    yhat = (p >= THRESHOLD).astype(np.int64)
    degenerate = []

    def safe_auroc(s, t):
        try:
            return auroc(s, t)
        except SingleClass:
            return None

    overall = safe_auroc(p, y)
    group_auroc, group_acc = {}, {}
    for grp in np.unique(g):
        m = g == grp
        a = safe_auroc(p[m], y[m])
        if a is None:
            degenerate.append(int(grp))
        group_auroc[int(grp)] = a
        group_acc[int(grp)] = float(np.mean(yhat[m] == y[m]))
    rates = [yhat[g == grp].mean() for grp in np.unique(g)]
    gaps = {}
    for metric in (Metric.ACCURACY, Metric.AUROC):
        try:
            rep = gap_report(y.astype(np.float64), p, g, metric)
            gaps[metric.value] = {"delta": rep.delta, "delta_group": rep.delta_group}
        except Exception as exc:  # recorded, not raised
            gaps[metric.value] = {"error": type(exc).__name__}
    return PerformanceReport(
        auroc=overall,
        accuracy=float(np.mean(yhat == y)),
        brier=float(np.mean((p - y) ** 2)),
        group_auroc=group_auroc,
        group_accuracy=group_acc,
        dp_gap=float(max(rates) - min(rates)) if len(rates) > 1 else 0.0,
        gaps=gaps,
        degenerate=degenerate,
    )


# -- persistence --------------------------------------------------------------

def predictor_to_dict(model: Predictor) -> dict:
    return {
        "format": "fidelity_audit.predictor",
        "version": FORMAT_VERSION,
        "family": model.family,
        "config": model.config,
        "converged": model.converged,
        "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                   for k, v in model.params.items()},
    }


def predictor_from_dict(d: dict) -> Predictor:
    if d.get("format") != "fidelity_audit.predictor":
        raise UnsupportedFormat("not a predictor record")
    if d.get("version") != FORMAT_VERSION:
        raise UnsupportedFormat(f"unsupported predictor version {d.get('version')!r}")
    params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
              for k, v in d["params"].items()}
    return Predictor(d["family"], params, d.get("config", {}), d.get("converged", True))


def save_predictor(model: Predictor, path) -> None:
    Path(path).write_text(json.dumps(predictor_to_dict(model), indent=1))


def load_predictor(path) -> Predictor:
    return predictor_from_dict(json.loads(Path(path).read_text()))

"""Per-query local surrogates: LIME, JTT-reweighted LIME and kernel SHAP.

All explainers work in the encoded (one-hot + standardized) feature space and
take any callable blackbox ``f(X) -> probabilities`` or an object with a
``predict_proba`` method.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from .errors import DegenerateCoalitionSet, SingularSystem

EXHAUSTIVE_MAX_M = 12


def _as_function(predictor):
    return getattr(predictor, "predict_proba", predictor)


def point_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per query point, so parallel and serial runs agree."""
    return np.random.default_rng([int(seed), int(index)])


@dataclass(frozen=True)
class LimeConfig:
    n_perturbations: int = 5000
    sigma: float = 1.0
    k: int | None = None            # feature budget; None keeps every feature
    ridge_lambda: float = 1.0
    kernel_width: float | None = None   # None -> 0.75 * sqrt(d)
    clip_outputs: bool = False
    seed: int = 0

    def width(self, d: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * np.sqrt(d)


@dataclass(frozen=True)
class JttConfig:
    lambda_up: float = 5.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.lambda_up < 1:
            raise ValueError("lambda_up must be >= 1")


@dataclass(frozen=True)
class PerturbationSet:
    x_star: np.ndarray
    samples: np.ndarray
    weights: np.ndarray
    targets: np.ndarray

    def reweighted(self, weights) -> "PerturbationSet":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))


@dataclass(frozen=True)
class LocalExplanation:
    intercept: float
    weights: np.ndarray             # one per selected feature
    features: tuple[int, ...]       # selected encoded feature ids
    value: float                    # surrogate output at the query point
    method: str
    blackbox_value: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    def predict(self, Z) -> np.ndarray:
        """Evaluate a linear (LIME-family) surrogate at encoded points."""
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        return self.intercept + Z[:, list(self.features)] @ self.weights

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "intercept": self.intercept,
            "weights": [[int(f), float(w)] for f, w in zip(self.features, self.weights)],
            "value": self.value,
            "blackbox_value": self.blackbox_value,
        }


# -- LIME ---------------------------------------------------------------------

def perturb(predictor, x_star, cfg: LimeConfig, rng=None) -> PerturbationSet:
    """Gaussian samples around ``x_star`` with an exponential proximity kernel."""
    if cfg.sigma < 0:
        raise ValueError("sigma must be >= 0")
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d = x_star.size
    noise = rng.standard_normal((cfg.n_perturbations, d))
    Z = x_star + cfg.sigma * noise
    dist2 = np.sum((Z - x_star) ** 2, axis=1)
    w = np.exp(-dist2 / cfg.width(d) ** 2)
    targets = np.asarray(_as_function(predictor)(Z), dtype=np.float64)
    return PerturbationSet(x_star, Z, w, targets)


def _ridge_solve(Z, y, w, lam):
    n, p = Z.shape
    A = np.hstack([np.ones((n, 1)), Z])
    AtW = A.T * w
    M = AtW @ A
    pen = np.full(p + 1, float(lam))
    pen[0] = 0.0
    M[np.diag_indices_from(M)] += pen
    rhs = AtW @ y
    if lam == 0 and np.linalg.matrix_rank(A * np.sqrt(w)[:, None]) < p + 1:
        raise SingularSystem("weighted design is rank deficient and ridge_lambda = 0")
    try:
        beta = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return beta


def normal_equation_residual(pert: PerturbationSet, expl: LocalExplanation,
                             ridge_lambda: float) -> float:
    """Norm of (A'WA + lam*D) beta - A'Wy for a fitted explanation."""
    Z = pert.samples[:, list(expl.features)]
    A = np.hstack([np.ones((len(Z), 1)), Z])
    beta = np.concatenate([[expl.intercept], expl.weights])
    pen = np.full(A.shape[1], float(ridge_lambda))
    pen[0] = 0.0
    AtW = A.T * pert.weights
    return float(np.linalg.norm(AtW @ A @ beta + pen * beta - AtW @ pert.targets))


def fit_weighted_ridge(pert: PerturbationSet, k: int | None = None,
                       ridge_lambda: float = 1.0, method: str = "lime") -> LocalExplanation:
    """Weighted ridge surrogate, optionally restricted to the top-k features.

    Feature selection ranks a preliminary all-feature fit by |coefficient|
    (ties to the lower index) and refits on the chosen k.
    """
    d = pert.samples.shape[1]
    k = d if k is None else int(k)
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    beta = _ridge_solve(pert.samples, pert.targets, pert.weights, ridge_lambda)
    if k < d:
        order = np.argsort(-np.abs(beta[1:]), kind="stable")
        features = tuple(int(j) for j in np.sort(order[:k]))
        beta = _ridge_solve(pert.samples[:, list(features)], pert.targets, pert.weights,
                            ridge_lambda)
    else:
        features = tuple(range(d))
    intercept, coef = float(beta[0]), beta[1:]
    value = float(intercept + pert.x_star[list(features)] @ coef)
    return LocalExplanation(intercept, coef, features, value, method)


def _finish(expl: LocalExplanation, cfg: LimeConfig, fx: float) -> LocalExplanation:
    value = float(np.clip(expl.value, 0.0, 1.0)) if cfg.clip_outputs else expl.value
    return replace(expl, value=value, blackbox_value=fx)


def explain_lime(predictor, x_star, cfg: LimeConfig = LimeConfig(), rng=None) -> LocalExplanation:
    f = _as_function(predictor)
    pert = perturb(f, x_star, cfg, rng)
    expl = fit_weighted_ridge(pert, cfg.k, cfg.ridge_lambda)
    return _finish(expl, cfg, float(f(np.atleast_2d(x_star))[0]))


@dataclass(frozen=True)
class JttFit:
    stage1: LocalExplanation
    stage2: LocalExplanation
    error_set: np.ndarray       # boolean mask over perturbations
    pert: PerturbationSet


def jtt_fit(pert: PerturbationSet, k, ridge_lambda, lambda_up: float,
            threshold: float = 0.5) -> JttFit:
    """Two-stage fit: upweight perturbations the first surrogate gets wrong."""
    stage1 = fit_weighted_ridge(pert, k, ridge_lambda)
    ident = stage1.predict(pert.samples)
    errors = (ident >= threshold) != (pert.targets >= threshold)
    if lambda_up == 1 or not errors.any():
        stage2 = stage1
    else:
        w = np.where(errors, pert.weights * lambda_up, pert.weights)
        stage2 = fit_weighted_ridge(pert.reweighted(w), k, ridge_lambda)
    return JttFit(stage1, replace(stage2, method="lime_jtt"), errors, pert)


def explain_lime_jtt(predictor, x_star, cfg: LimeConfig = LimeConfig(),
                     jtt: JttConfig = JttConfig(), rng=None) -> LocalExplanation:
    f = _as_function(predictor)
    pert = perturb(f, x_star, cfg, rng)
    fit = jtt_fit(pert, cfg.k, cfg.ridge_lambda, jtt.lambda_up, jtt.threshold)
    expl = replace(fit.stage2, info={"error_set_size": int(fit.error_set.sum())})
    return _finish(expl, cfg, float(f(np.atleast_2d(x_star))[0]))


def explain_lime_jtt_multi(predictor, x_star, cfg: LimeConfig, lambdas,
                           rng=None) -> dict:
    """JTT explanations for several upweighting factors sharing one sample."""
    f = _as_function(predictor)
    pert = perturb(f, x_star, cfg, rng)
    fx = float(f(np.atleast_2d(x_star))[0])
    return {lam: _finish(jtt_fit(pert, cfg.k, cfg.ridge_lambda, lam).stage2, cfg, fx)
            for lam in lambdas}


# -- kernel SHAP ----------------------------------------------------------------

def shapley_kernel_weight(M: int, s: int) -> float:
    return (M - 1) / (comb(M, s) * s * (M - s))


def _coalitions(M: int, n_coalitions: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Coalition matrix and regression weights, excluding empty and full sets."""
    if M <= EXHAUSTIVE_MAX_M:
        rows = [z for z in itertools.product((0, 1), repeat=M) if 0 < sum(z) < M]
        Z = np.array(rows, dtype=np.float64).reshape(-1, M)
        w = np.array([shapley_kernel_weight(M, int(s)) for s in Z.sum(axis=1)])
        return Z, w
    # sample sizes in proportion to their total kernel mass, then uniform subsets
    sizes = np.arange(1, M)
    mass = (M - 1) / (sizes * (M - sizes))
    drawn = rng.choice(sizes, size=n_coalitions, p=mass / mass.sum())
    Z = np.zeros((n_coalitions, M))
    for i, s in enumerate(drawn):
        Z[i, rng.choice(M, size=s, replace=False)] = 1.0
    Z, counts = np.unique(Z, axis=0, return_counts=True)
    return Z, counts.astype(np.float64)


def _coalition_values(f, x_star, background, Z, features):
    """Mean blackbox output with absent features filled from background rows."""
    nb, d = background.shape
    present = np.zeros((len(Z), d), dtype=bool)
    present[:, features] = Z.astype(bool)
    rows = np.where(present[:, None, :], x_star[None, None, :], background[None, :, :])
    out = np.asarray(f(rows.reshape(-1, d)), dtype=np.float64)
    return out.reshape(len(Z), nb).mean(axis=1)


def _constrained_wls(Z, v, w, phi0, total):
    """min sum w (v - phi0 - Z phi)^2  s.t.  sum(phi) = total - phi0."""
    M = Z.shape[1]
    delta = total - phi0
    if M == 1:
        return np.array([delta])
    y = v - phi0 - Z[:, -1] * delta
    X = Z[:, :-1] - Z[:, [-1]]
    XtW = X.T * w
    head = np.linalg.lstsq(XtW @ X, XtW @ y, rcond=None)[0]
    return np.append(head, delta - head.sum())


def explain_kernel_shap(predictor, x_star, background, n_coalitions: int | None = None,
                        seed: int = 0, k: int | None = None, rng=None) -> LocalExplanation:
    """Kernel SHAP with local accuracy enforced as a hard constraint.

    Exhaustive over coalitions when the feature count is at most 12. With
    ``k`` below the feature count, the top-k features by |phi| from the full
    fit are refit with every other feature held at the background.
    """
    f = _as_function(predictor)
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ValueError("background must be nonempty")
    rng = np.random.default_rng(seed) if rng is None else rng
    d = x_star.size
    phi0 = float(np.mean(f(background)))
    fx = float(f(x_star[None, :])[0])

    def fit(features):
        M = len(features)
        if M == 1:
            total = _coalition_values(f, x_star, background, np.ones((1, 1)), features)[0]
            return np.array([total - phi0]), float(total)
        budget = n_coalitions if n_coalitions is not None else 2 * M + 2048
        Z, w = _coalitions(M, budget, rng)
        if len(Z) == 0:
            raise DegenerateCoalitionSet("no coalitions besides the empty and full sets")
        v = _coalition_values(f, x_star, background, Z, features)
        if M == d:
            total = fx
        else:
            total = float(_coalition_values(f, x_star, background, np.ones((1, M)),
                                            features)[0])
        return _constrained_wls(Z, v, w, phi0, total), total

    all_features = list(range(d))
    phi, total = fit(all_features)
    features = tuple(all_features)
    if k is not None and k < d:
        order = np.argsort(-np.abs(phi), kind="stable")
        features = tuple(int(j) for j in np.sort(order[:k]))
        phi, total = fit(list(features))
    value = phi0 + float(np.sum(phi))
    return LocalExplanation(phi0, phi, features, value, "kernel_shap", fx,
                            {"target": total})


# -- batch ------------------------------------------------------------------------

def explain_points(method: str, predictor, X, *, lime: LimeConfig = LimeConfig(),
                   jtt: JttConfig | None = None, background=None,
                   n_coalitions: int | None = None, k: int | None = None,
                   seed: int = 0) -> list[LocalExplanation]:
    """Explain every row of ``X``; row i draws from ``point_rng(seed, i)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = []
    for i, x in enumerate(X):
        rng = point_rng(seed, i)
        if method == "lime":
            out.append(explain_lime(predictor, x, lime, rng))
        elif method == "lime_jtt":
            out.append(explain_lime_jtt(predictor, x, lime, jtt or JttConfig(), rng))
        elif method == "kernel_shap":
            out.append(explain_kernel_shap(predictor, x, background, n_coalitions,
                                           k=k, rng=rng))
        else:
            raise ValueError(f"unknown local method {method!r}")
    return out

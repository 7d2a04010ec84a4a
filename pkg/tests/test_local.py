import itertools
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fidelity_audit.blackbox import Predictor
from fidelity_audit.errors import SingularSystem
from fidelity_audit.local import (
    JttConfig,
    LimeConfig,
    PerturbationSet,
    explain_kernel_shap,
    explain_lime,
    explain_lime_jtt,
    explain_lime_jtt_multi,
    explain_points,
    fit_weighted_ridge,
    jtt_fit,
    normal_equation_residual,
    perturb,
    point_rng,
)


def random_mlp(d, hidden=6, seed=0):
    rng = np.random.default_rng(seed)
    return Predictor("mlp", {"W1": rng.normal(size=(d, hidden)), "b1": rng.normal(size=hidden),
                             "w2": rng.normal(size=hidden), "b2": rng.normal(size=1)})


def exact_shapley(f, x, background):
    """Brute-force Shapley values over all subsets (interventional value function)."""
    d = len(x)

    def v(S):
        rows = background.copy()
        rows[:, list(S)] = x[list(S)]
        return float(np.mean(f(rows)))

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for r in range(d):
            for S in itertools.combinations(others, r):
                w = factorial(r) * factorial(d - r - 1) / factorial(d)
                phi[i] += w * (v(S + (i,)) - v(S))
    return phi


# -- perturbation ------------------------------------------------------------------

def test_perturb_defaults_and_sigma_zero():
    assert LimeConfig().n_perturbations == 5000
    x = np.array([0.5, -1.0, 2.0])
    pert = perturb(lambda Z: Z[:, 0], x, LimeConfig(n_perturbations=50, sigma=0.0))
    assert np.all(pert.samples == x)
    assert np.all(pert.weights == 1.0)


def test_perturb_mean_within_standard_error():
    x = np.array([1.0, -2.0, 0.0, 3.0])
    cfg = LimeConfig(sigma=1.5)
    pert = perturb(lambda Z: Z[:, 0], x, cfg, np.random.default_rng(0))
    se = cfg.sigma / np.sqrt(cfg.n_perturbations)
    assert np.all(np.abs(pert.samples.mean(axis=0) - x) < 3 * se)


# -- weighted ridge ------------------------------------------------------------------

def test_ridge_recovers_linear_targets():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(300, 4))
    coef = np.array([1.5, -2.0, 0.0, 0.7])
    pert = PerturbationSet(np.zeros(4), Z, rng.random(300) + 0.1, Z @ coef + 0.3)
    expl = fit_weighted_ridge(pert, ridge_lambda=0.0)
    assert np.allclose(expl.weights, coef, atol=1e-6)
    assert expl.intercept == pytest.approx(0.3, abs=1e-6)


@given(st.integers(0, 10_000), st.floats(0.0, 10.0), st.integers(1, 6))
@settings(max_examples=50, deadline=None)
def test_normal_equation_residual(seed, lam, k):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(80, 6))
    pert = PerturbationSet(Z[0], Z, rng.random(80) + 0.05, rng.random(80))
    expl = fit_weighted_ridge(pert, k=k, ridge_lambda=lam)
    assert normal_equation_residual(pert, expl, lam) < 1e-8


def test_constant_targets_zero_weights():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(100, 3))
    pert = PerturbationSet(np.zeros(3), Z, np.ones(100), np.full(100, 0.37))
    expl = fit_weighted_ridge(pert)
    assert np.allclose(expl.weights, 0, atol=1e-12)
    assert expl.intercept == pytest.approx(0.37)


def test_singular_without_ridge():
    Z = np.ones((10, 2))
    pert = PerturbationSet(np.ones(2), Z, np.ones(10), np.arange(10.0))
    with pytest.raises(SingularSystem):
        fit_weighted_ridge(pert, ridge_lambda=0.0)


# -- LIME --------------------------------------------------------------------------

def test_lime_recovers_global_linear_blackbox():
    coef = np.array([0.3, -0.2, 0.1, 0.05])
    f = lambda Z: Z @ coef + 0.5  # noqa: E731
    expl = explain_lime(f, np.array([0.2, 0.1, -0.4, 1.0]), LimeConfig(ridge_lambda=1e-6))
    assert np.allclose(expl.weights, coef, atol=1e-4)


def test_lime_constant_predictor():
    expl = explain_lime(lambda Z: np.full(len(Z), 0.42), np.zeros(3))
    assert np.allclose(expl.weights, 0, atol=1e-10)
    assert expl.value == pytest.approx(0.42)


def test_lime_top1_selects_dominant_feature():
    f = lambda Z: 1 / (1 + np.exp(-(1.0 * Z[:, 0] + 0.1 * Z[:, 1])))  # noqa: E731
    expl = explain_lime(f, np.zeros(2), LimeConfig(k=1))
    assert expl.features == (0,)


def test_lime_bitwise_reproducible():
    f = random_mlp(3)
    x = np.array([0.1, 0.2, 0.3])
    a = explain_lime(f, x, rng=point_rng(4, 2))
    b = explain_lime(f, x, rng=point_rng(4, 2))
    assert a.value == b.value and np.array_equal(a.weights, b.weights)


def test_clip_outputs_flag():
    f = lambda Z: np.clip(Z[:, 0] * 2.0 + 0.9, 0, 1)  # noqa: E731
    x = np.array([0.5])
    raw = explain_lime(f, x, LimeConfig(n_perturbations=500), np.random.default_rng(0))
    clipped = explain_lime(f, x, LimeConfig(n_perturbations=500, clip_outputs=True),
                           np.random.default_rng(0))
    assert 0.0 <= clipped.value <= 1.0
    assert clipped.value == pytest.approx(np.clip(raw.value, 0, 1))


# -- JTT -----------------------------------------------------------------------------

def test_jtt_lambda_one_equals_lime():
    f = random_mlp(4, seed=2)
    x = np.array([0.3, -0.5, 1.0, 0.0])
    for k in (None, 2):
        cfg = LimeConfig(k=k, n_perturbations=800)
        a = explain_lime(f, x, cfg, point_rng(0, 0))
        b = explain_lime_jtt(f, x, cfg, JttConfig(lambda_up=1.0), point_rng(0, 0))
        assert a.value == b.value
        assert np.array_equal(a.weights, b.weights)


def test_jtt_empty_error_set_equals_lime():
    coef = np.array([0.2, -0.1])
    f = lambda Z: 1 / (1 + np.exp(-(Z @ coef)))  # noqa: E731
    x = np.array([3.0, -3.0])  # far from the boundary: stage 1 never errs
    cfg = LimeConfig(n_perturbations=500, sigma=0.1)
    a = explain_lime(f, x, cfg, point_rng(0, 0))
    b = explain_lime_jtt(f, x, cfg, JttConfig(lambda_up=20), point_rng(0, 0))
    assert b.info["error_set_size"] == 0
    assert a.value == b.value


def test_jtt_stage2_better_on_error_set():
    # ring-shaped boundary around the query: a linear fit misses part of it
    f = lambda Z: 1 / (1 + np.exp(-8 * (1.0 - (Z ** 2).sum(axis=1))))  # noqa: E731
    x = np.array([0.6, 0.0])
    pert = perturb(f, x, LimeConfig(n_perturbations=3000), np.random.default_rng(0))
    fit = jtt_fit(pert, None, 1.0, lambda_up=20.0)
    err = fit.error_set
    assert err.any()
    truth = pert.targets[err] >= 0.5
    acc1 = np.mean((fit.stage1.predict(pert.samples[err]) >= 0.5) == truth)
    acc2 = np.mean((fit.stage2.predict(pert.samples[err]) >= 0.5) == truth)
    assert acc1 == 0.0
    assert acc2 > acc1


def test_jtt_multi_shares_sample():
    f = random_mlp(3, seed=5)
    x = np.array([0.0, 1.0, -1.0])
    cfg = LimeConfig(n_perturbations=600)
    multi = explain_lime_jtt_multi(f, x, cfg, (1.0, 5.0), point_rng(1, 1))
    single = explain_lime_jtt(f, x, cfg, JttConfig(lambda_up=5.0), point_rng(1, 1))
    assert multi[5.0].value == single.value
    assert multi[1.0].value == explain_lime(f, x, cfg, point_rng(1, 1)).value


def test_jtt_rejects_downweighting():
    with pytest.raises(ValueError):
        JttConfig(lambda_up=0.5)


# -- kernel SHAP --------------------------------------------------------------------

def test_shap_linear_matches_enumeration():
    rng = np.random.default_rng(0)
    coef = rng.normal(size=5)
    f = lambda Z: Z @ coef  # noqa: E731
    bg = rng.normal(size=(20, 5))
    x = rng.normal(size=5)
    expl = explain_kernel_shap(f, x, bg)
    np.testing.assert_allclose(expl.weights, exact_shapley(f, x, bg), atol=1e-6)
    np.testing.assert_allclose(expl.weights, coef * (x - bg.mean(axis=0)), atol=1e-6)


@pytest.mark.parametrize("d", [2, 4, 7, 10])
def test_shap_nonlinear_matches_enumeration(d):
    f = random_mlp(d, seed=d)
    rng = np.random.default_rng(d)
    bg = rng.normal(size=(8, d))
    x = rng.normal(size=d)
    expl = explain_kernel_shap(f, x, bg)
    np.testing.assert_allclose(expl.weights, exact_shapley(f, x, bg), atol=1e-6)


@given(st.integers(0, 10_000), st.integers(1, 14))
@settings(max_examples=30, deadline=None)
def test_shap_local_accuracy(seed, d):
    f = random_mlp(d, seed=seed)
    rng = np.random.default_rng(seed)
    bg = rng.normal(size=(5, d))
    x = rng.normal(size=d)
    expl = explain_kernel_shap(f, x, bg, n_coalitions=200, seed=seed)
    assert abs(expl.value - f(x[None])[0]) < 1e-8


def test_shap_query_equals_background():
    f = random_mlp(4)
    bg = np.array([[0.1, 0.2, 0.3, 0.4]])
    expl = explain_kernel_shap(f, bg[0], bg)
    assert np.allclose(expl.weights, 0, atol=1e-12)


def test_shap_top_k():
    coef = np.array([3.0, 0.1, -2.0, 0.05])
    f = lambda Z: Z @ coef  # noqa: E731
    expl = explain_kernel_shap(f, np.ones(4), np.zeros((1, 4)), k=2)
    assert expl.features == (0, 2)
    np.testing.assert_allclose(expl.weights, [3.0, -2.0], atol=1e-9)


def test_explain_points_dispatch():
    f = random_mlp(3)
    X = np.random.default_rng(0).normal(size=(4, 3))
    lime = explain_points("lime", f, X, lime=LimeConfig(n_perturbations=200), seed=3)
    again = explain_points("lime", f, X, lime=LimeConfig(n_perturbations=200), seed=3)
    assert [e.value for e in lime] == [e.value for e in again]
    shap = explain_points("kernel_shap", f, X, background=X)
    assert np.allclose([e.value for e in shap], f(X))
    with pytest.raises(ValueError):
        explain_points("anchors", f, X)

"""Test the Laplace approximated logistic mixed model."""

import numpy as np
import pytest


def _clustered(seed, n_clusters, size, sigma, slope_sd=0.0):
    from pyppiv.numerics import expit

    rng = np.random.default_rng(seed)
    ids = np.repeat(np.arange(n_clusters), size)
    n = ids.size
    w = rng.normal(size=n)
    time = np.tile(np.linspace(1.0, 12.0, size), n_clusters)
    b0 = rng.normal(scale=sigma, size=n_clusters)[ids]
    b1 = rng.normal(scale=slope_sd, size=n_clusters)[ids]
    eta = -0.3 + 0.8 * w + b0 + b1 * time
    y = (rng.random(n) < expit(eta)).astype(float)
    design = np.column_stack([np.ones(n), w])
    return design, ids, y, time


def _central_difference(func, params, step=1e-5):
    grad = np.empty_like(params)
    for k in range(params.size):
        up, down = params.copy(), params.copy()
        up[k] += step
        down[k] -= step
        grad[k] = (func(up) - func(down)) / (2 * step)
    return grad


def _loglik(design, ids, y):
    from pyppiv.glmm import laplace_objective

    return lambda p: laplace_objective(design, ids, y, p)[0]


@pytest.mark.parametrize(
    "random_spec, params",
    [
        ("intercept", np.array([-0.2, 0.6, np.log(0.7)])),
        ("intercept_and_slope", np.array([-0.2, 0.6, np.log(0.7), 0.05, np.log(0.08)])),
    ],
)
def test_gradient_matches_finite_differences(random_spec, params):
    from pyppiv.glmm import laplace_objective

    design, ids, y, time = _clustered(4, 12, 25, 0.8, 0.05)

    def value(p):
        return laplace_objective(design, ids, y, p, random_spec, time)[0]

    _, analytic = laplace_objective(design, ids, y, params, random_spec, time)
    numeric = _central_difference(value, params)

    assert np.all(np.abs(analytic - numeric) <= 1e-4 * np.maximum(1.0, np.abs(numeric)))


def test_fit_recovers_random_intercept():
    from pyppiv.glmm import fit_glmm_logistic

    design, ids, y, _ = _clustered(6, 40, 50, 1.0)
    fit = fit_glmm_logistic(design, ids, y)

    assert fit.converged
    assert fit.identifiable
    assert not fit.boundary
    assert fit.var_components.shape == (1, 1)
    assert 0.3 < fit.var_components[0, 0] < 2.5
    assert fit.fixed_coef[1] == pytest.approx(0.8, abs=0.25)
    assert fit.ranef.shape == (40, 1)
    assert list(fit.cluster_ids) == list(range(40))
    sd = fit.ranef[:, 0].std()
    assert abs(fit.ranef[:, 0].mean()) <= 0.05 * sd


def test_optimum_on_small_datasets():
    from pyppiv.glmm import fit_glmm_logistic, laplace_objective

    for seed in range(20):
        design, ids, y, _ = _clustered(200 + seed, 30, 30, 1.0)
        fit = fit_glmm_logistic(design, ids, y)
        params = np.concatenate([fit.fixed_coef, fit.theta])

        loglik, analytic = laplace_objective(design, ids, y, params)
        numeric = _central_difference(_loglik(design, ids, y), params)
        scale = np.maximum(1.0, np.abs(numeric))

        assert loglik == pytest.approx(fit.laplace_loglik), seed
        assert np.all(np.abs(analytic - numeric) <= 1e-4 * scale), seed
        assert np.all(np.abs(analytic[:2]) <= 1e-2), seed
        if not fit.boundary:
            sd = fit.ranef[:, 0].std()
            assert abs(fit.ranef[:, 0].mean()) <= 0.05 * sd, seed


def test_zero_variance_data():
    from pyppiv.glmm import fit_glmm_logistic
    from pyppiv.numerics import fit_logistic

    design, ids, y, _ = _clustered(7, 30, 400, 0.0)
    fit = fit_glmm_logistic(design, ids, y)
    plain = fit_logistic(design, y)

    assert fit.var_components[0, 0] <= 0.01
    assert np.allclose(fit.fixed_coef, plain.coef, atol=0.05)


def test_extreme_clusters_are_shrunken():
    from pyppiv.glmm import fit_glmm_logistic

    design, ids, y, _ = _clustered(8, 20, 30, 0.7)
    y = y.copy()
    y[ids == 0] = 0.0
    y[ids == 1] = 1.0
    fit = fit_glmm_logistic(design, ids, y)

    assert np.all(np.isfinite(fit.ranef))
    assert fit.ranef[0, 0] < 0 < fit.ranef[1, 0]
    # the empirical log odds of an all-0 or all-1 cluster is infinite
    assert abs(fit.ranef[0, 0]) < 10
    assert abs(fit.ranef[1, 0]) < 10


def test_singleton_clusters_are_not_identifiable(caplog):
    from pyppiv.glmm import fit_glmm_logistic

    rng = np.random.default_rng(2)
    design = np.column_stack([np.ones(40), rng.normal(size=40)])
    y = (rng.random(40) < 0.5).astype(float)
    fit = fit_glmm_logistic(design, np.arange(40), y)

    assert not fit.identifiable
    assert fit.boundary
    assert fit.notes
    assert np.all(fit.var_components == 0)
    assert "not identified" in caplog.text


def test_random_slope_fit_is_psd():
    from pyppiv.exceptions import ConvergenceError
    from pyppiv.glmm import fit_glmm_logistic

    design, ids, y, time = _clustered(10, 30, 60, 0.8, 0.08)
    try:
        fit = fit_glmm_logistic(
            design, ids, y, random_spec="intercept_and_slope", time=time
        )
    except ConvergenceError as exc:
        fit = exc.fit

    assert fit.var_components.shape == (2, 2)
    assert np.allclose(fit.var_components, fit.var_components.T)
    assert np.all(np.linalg.eigvalsh(fit.var_components) >= -1e-12)
    assert fit.ranef.shape == (30, 2)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"random_spec": "slope_only"}, "unknown random effect spec"),
        ({"random_spec": "intercept_and_slope"}, "needs a time column"),
    ],
)
def test_bad_random_spec(kwargs, message):
    from pyppiv.exceptions import PyppivValueError
    from pyppiv.glmm import fit_glmm_logistic

    design, ids, y, _ = _clustered(1, 5, 10, 0.5)
    with pytest.raises(PyppivValueError, match=message):
        fit_glmm_logistic(design, ids, y, **kwargs)


def test_needs_two_clusters():
    from pyppiv.exceptions import PyppivValueError
    from pyppiv.glmm import fit_glmm_logistic

    design, _, y, _ = _clustered(1, 1, 20, 0.5)
    with pytest.raises(PyppivValueError, match="at least 2 clusters"):
        fit_glmm_logistic(design, np.zeros(20), y)

"""Test least squares, logistic regression and the partial F statistic."""

import numpy as np
import pytest


def test_ols_constant_fit():
    from pyppiv.numerics import fit_ols

    fit = fit_ols(np.ones((4, 1)), np.array([2.0, 2.0, 2.0, 2.0]))

    assert fit.coef[0] == pytest.approx(2.0)
    assert fit.rss == pytest.approx(0.0, abs=1e-20)
    assert fit.df_resid == 3


def test_ols_exact_line():
    from pyppiv.numerics import fit_ols

    x = np.linspace(-2.0, 5.0, 11)
    fit = fit_ols(np.column_stack([np.ones_like(x), x]), 3.0 + 2.0 * x)

    assert np.allclose(fit.coef, [3.0, 2.0], atol=1e-10)


def test_ols_matches_normal_equations():
    from pyppiv.numerics import fit_ols

    rng = np.random.default_rng(3)
    design = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
    y = rng.normal(size=50)

    fit = fit_ols(design, y)
    expected = np.linalg.solve(design.T @ design, design.T @ y)

    assert np.allclose(fit.coef, expected, rtol=1e-8, atol=0)
    resid = y - design @ fit.coef
    assert np.max(np.abs(design.T @ resid)) <= 1e-8 * 50
    assert fit.sigma2 == pytest.approx(resid @ resid / 47)
    assert np.allclose(fit.coef_cov, fit.coef_cov.T)
    assert np.all(np.linalg.eigvalsh(fit.coef_cov) >= 0)


def test_ols_rank_deficiency_names_column():
    from pyppiv.exceptions import RankDeficiencyError
    from pyppiv.numerics import fit_ols

    rng = np.random.default_rng(0)
    z = rng.normal(size=20)
    design = np.column_stack([np.ones(20), z, 2.0 * z])

    with pytest.raises(RankDeficiencyError) as exc:
        fit_ols(design, rng.normal(size=20), columns=["intercept", "z", "z_twice"])

    assert exc.value.column == "z_twice"
    assert "z_twice" in str(exc.value)


@pytest.mark.parametrize(
    "design, y",
    [
        (np.ones((5, 2)), np.ones(4)),
        (np.ones(5), np.ones(5)),
        (np.ones((2, 2)), np.ones(2)),
    ],
)
def test_ols_dimension_mismatch(design, y):
    from pyppiv.exceptions import DimensionMismatchError
    from pyppiv.numerics import fit_ols

    with pytest.raises(DimensionMismatchError):
        fit_ols(design, y)


def test_logistic_intercept_only_closed_form():
    from pyppiv.numerics import fit_logistic, logit

    y = np.array([1.0] * 25 + [0.0] * 75)
    fit = fit_logistic(np.ones((100, 1)), y)

    assert fit.converged
    assert fit.coef[0] == pytest.approx(logit(0.25), abs=1e-8)
    assert fit.deviance == pytest.approx(-2.0 * fit.loglik)
    assert fit.max_abs_score <= 1e-8


def test_logistic_deviance_path_non_increasing():
    from pyppiv.numerics import expit, fit_logistic

    rng = np.random.default_rng(5)
    x = rng.normal(size=(300, 2))
    y = (rng.random(300) < expit(0.3 + x @ [1.0, -0.5])).astype(float)
    fit = fit_logistic(np.column_stack([np.ones(300), x]), y)

    assert fit.converged
    assert np.all(np.diff(fit.deviance_path) <= 1e-9)
    assert fit.deviance == pytest.approx(fit.deviance_path[-1])


def test_logistic_null_covariate_within_three_se():
    from pyppiv.numerics import fit_logistic

    rng = np.random.default_rng(8)
    n = 4000
    w = rng.normal(size=n)
    y = (rng.random(n) < 0.4).astype(float)
    fit = fit_logistic(np.column_stack([np.ones(n), w]), y)

    se = np.sqrt(fit.coef_cov[1, 1])
    assert abs(fit.coef[1]) <= 3 * se


def test_logistic_nested_deviance():
    from pyppiv.numerics import fit_logistic

    rng = np.random.default_rng(9)
    w = rng.normal(size=(200, 2))
    y = (rng.random(200) < 0.5).astype(float)
    small = fit_logistic(np.column_stack([np.ones(200), w[:, 0]]), y)
    big = fit_logistic(np.column_stack([np.ones(200), w]), y)

    assert small.deviance >= big.deviance - 1e-9


def test_logistic_separation_is_flagged_not_raised():
    from pyppiv.numerics import fit_logistic

    x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
    y = (x > 0).astype(float)
    fit = fit_logistic(np.column_stack([np.ones(6), x]), y, quiet=True)

    assert fit.separated
    assert not fit.converged
    assert np.isfinite(fit.deviance)
    assert fit.deviance < 0.1


def test_logistic_non_convergence_keeps_last_iterate():
    from pyppiv.exceptions import ConvergenceError
    from pyppiv.numerics import fit_logistic

    y = np.array([1.0] * 25 + [0.0] * 75)
    with pytest.raises(ConvergenceError) as exc:
        fit_logistic(np.ones((100, 1)), y, max_iter=0)

    assert exc.value.fit is not None
    assert exc.value.fit.n_iter == 0


def test_logistic_rejects_non_binary_response():
    from pyppiv.exceptions import PyppivValueError
    from pyppiv.numerics import fit_logistic

    with pytest.raises(PyppivValueError):
        fit_logistic(np.ones((3, 1)), np.array([0.0, 1.0, 2.0]))


def _first_stage(rng, n, strength):
    w = rng.normal(size=n)
    z = rng.normal(size=n)
    x = 0.5 * w + strength * z + rng.normal(size=n)
    full = np.column_stack([np.ones(n), z, w])
    return full, full[:, [0, 2]], x


def test_partial_f_equals_squared_t():
    from pyppiv.numerics import fit_ols, partial_f

    full_design, restricted_design, x = _first_stage(np.random.default_rng(1), 200, 0.3)
    full = fit_ols(full_design, x)
    restricted = fit_ols(restricted_design, x)

    t = full.coef[1] / full.se[1]
    assert partial_f(full, restricted, 1) == pytest.approx(t ** 2, rel=1e-8)


def test_partial_f_rejects_swapped_models():
    from pyppiv.exceptions import NestingError, PyppivValueError
    from pyppiv.numerics import fit_ols, partial_f

    full_design, restricted_design, x = _first_stage(np.random.default_rng(2), 100, 1.0)
    full = fit_ols(full_design, x)
    restricted = fit_ols(restricted_design, x)

    with pytest.raises(NestingError):
        partial_f(restricted, full, 1)
    with pytest.raises(PyppivValueError):
        partial_f(full, restricted, 0)


def test_partial_f_perfect_first_stage():
    from pyppiv.numerics import fit_ols, partial_f

    rng = np.random.default_rng(4)
    z = rng.normal(size=1000)
    w = rng.normal(size=1000)
    x = 1.0 + 2.0 * z
    full = fit_ols(np.column_stack([np.ones(1000), z, w]), x)
    restricted = fit_ols(np.column_stack([np.ones(1000), w]), x)

    assert partial_f(full, restricted, 1) > 1e4


def test_partial_f_noise_instrument_is_weak():
    from pyppiv.numerics import fit_ols, partial_f

    rng = np.random.default_rng(12)
    below = 0
    n_reps = 400
    for _ in range(n_reps):
        full_design, restricted_design, x = _first_stage(rng, 1000, 0.0)
        f = partial_f(fit_ols(full_design, x), fit_ols(restricted_design, x), 1)
        assert f >= 0
        below += f < 5
    assert below >= 0.95 * n_reps


def test_expit_logit_round_trip():
    from pyppiv.numerics import expit, logit

    x = np.linspace(-30.0, 30.0, 601)
    err = np.abs(logit(expit(x)) - x)

    # near p = 1 the spacing of doubles bounds the error by about eps * exp(x)
    assert np.all(err <= 1e-12 + 1e-15 * np.exp(np.maximum(x, 0.0)))
    assert np.all(err[np.abs(x) <= 5.0] <= 1e-12)

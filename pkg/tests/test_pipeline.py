"""Test data preparation and two-stage estimation."""

import numpy as np
import pytest

from tests import helpers


@pytest.mark.parametrize(
    "method, n_j_min, cc_mode, covariates",
    [
        ("prevpatient", 2, "outcome_and_covariates", "all"),
        ("prev2patient", 3, "outcome_and_covariates", "all"),
        ("prev5patient", 6, "outcome_and_covariates", "all"),
        ("prev10patient", 11, "outcome_and_covariates", "all"),
        ("allprevprop", 2, "outcome_and_covariates", "all"),
        ("allprop", 2, "outcome_and_covariates", "all"),
        ("alldichmean", 2, "outcome_and_covariates", "all"),
        ("alldichmedian", 2, "outcome_and_covariates", "all"),
        ("epp", 2, "outcome_only", "obs_only"),
        ("epp_rirs", 2, "outcome_only", "obs_only"),
        ("star", 5, "outcome_and_covariates", "all"),
    ],
)
def test_requirements_table(method, n_j_min, cc_mode, covariates):
    from pyppiv.pipeline import requirements

    req = requirements(method)

    assert req.n_j_min == n_j_min
    assert req.cc_mode.value == cc_mode
    assert req.outcome_covariates.value == covariates


def test_prev_b_one_equals_prevpatient():
    from pyppiv.pipeline import run_method

    panel = helpers.make_panel([15] * 6, seed=2, missing_rate=0.2)
    one = run_method(panel, "prev_b(1)")
    named = run_method(panel, "prevpatient")

    assert one.beta_hat == named.beta_hat
    assert one.se == named.se
    assert one.f_statistic == named.f_statistic
    assert one.n_used == named.n_used


def test_confidence_interval_and_counts():
    from pyppiv.pipeline import Z_CRIT, run_method_with_ledger

    panel = helpers.make_panel([20] * 8, seed=4, missing_rate=0.25)
    result, ledger = run_method_with_ledger(panel, "prev2patient")

    assert result.ci_high - result.ci_low == pytest.approx(2 * Z_CRIT * result.se)
    assert result.covers(result.beta_hat)
    assert ledger.status == "ok"
    assert ledger.n_used == result.n_used
    dropped = (
        ledger.n_dropped_complete_case
        + ledger.n_dropped_provider_size
        + ledger.n_dropped_instrument
    )
    assert ledger.n_records_in - dropped == result.n_used
    assert ledger.n_dropped_complete_case == int(panel.r.any(axis=1).sum())


def test_perfect_instrument_collapses_to_ols():
    from pyppiv.numerics import fit_ols
    from pyppiv.pipeline import two_stage

    panel = helpers.make_panel([50] * 4, seed=6)
    covs, names = panel.covariates("all")
    beta, _, f_stat, _, _ = two_stage(panel.y, panel.x, panel.x, covs, names)
    ols = fit_ols(np.column_stack([np.ones(panel.n_records), panel.x, covs]), panel.y)

    assert beta == pytest.approx(ols.coef[1], abs=1e-10)
    assert f_stat > 1e4


def test_f_statistic_is_squared_t():
    from pyppiv.pipeline import two_stage

    panel = helpers.make_panel([40] * 5, seed=7)
    covs, _ = panel.covariates("all")
    z = panel.x + np.random.default_rng(7).normal(size=panel.n_records)
    _, _, f_stat, first, _ = two_stage(panel.y, panel.x, z, covs)

    t = first.coef[1] / first.se[1]
    assert f_stat == pytest.approx(t ** 2, rel=1e-8)


@pytest.mark.parametrize("method", ["allprop", "alldichmedian"])
def test_per_provider_instrument_location_equivariance(method):
    from pyppiv.pipeline import run_method

    shares = [0.2, 0.8, 0.3, 0.7, 0.5, 0.6]
    panel = helpers.make_panel([30] * 6, seed=8, shares=shares)
    shifted = panel.replace(y=panel.y + 10.0)

    assert run_method(shifted, method).beta_hat == pytest.approx(
        run_method(panel, method).beta_hat, abs=1e-10
    )


def test_noise_instrument_is_flagged_weak(caplog):
    from pyppiv.pipeline import run_method

    panel = helpers.make_panel([40] * 5, seed=9)
    noise = np.random.default_rng(9).random(panel.n_records)
    result = run_method(panel.replace(true_pp=noise), "pp")

    assert result.f_statistic < 10
    assert result.weak
    assert any("weak instrument" in note for note in result.notes)
    assert "weak instrument" in caplog.text


def test_corrected_standard_error():
    from pyppiv.exceptions import PyppivValueError
    from pyppiv.pipeline import run_method

    panel = helpers.make_panel([30] * 6, seed=10, shares=[0.2, 0.8, 0.3, 0.7, 0.5, 0.6])
    naive = run_method(panel, "allprop")
    corrected = run_method(panel, "allprop", se_kind="corrected")

    assert corrected.beta_hat == naive.beta_hat
    assert corrected.se != naive.se
    assert corrected.se_kind == "corrected"
    with pytest.raises(PyppivValueError):
        run_method(panel, "allprop", se_kind="robust")


def test_observational_unconfounded():
    from pyppiv.pipeline import run_observational

    panel = helpers.make_panel([100] * 10, seed=11)
    result = run_observational(panel)

    assert abs(result.beta_hat - 1.0) <= 4 * result.se
    assert result.f_statistic == 0
    assert not result.weak


def test_observational_collinear_covariate():
    from pyppiv.exceptions import RankDeficiencyError
    from pyppiv.models import PanelDataset
    from pyppiv.pipeline import run_observational

    panel = helpers.make_panel([20] * 3, seed=12)
    twice = PanelDataset.build(
        provider_labels=[panel.provider_ids[p] for p in panel.provider],
        order_index=panel.order_index,
        x=panel.x,
        y=panel.y,
        w_obs=np.column_stack([panel.w_obs, panel.w_obs]),
    )

    with pytest.raises(RankDeficiencyError, match="w_obs2"):
        run_observational(twice)


def test_pp_benchmarks_without_missingness_agree():
    from pyppiv.pipeline import run_pp_benchmarks

    panel = helpers.make_panel([30] * 6, seed=13)
    pp = np.random.default_rng(13).random(panel.n_records)
    full, cc = run_pp_benchmarks(panel.replace(true_pp=pp))

    assert full.method == "pp"
    assert cc.method == "pp_cc"
    assert full.beta_hat == pytest.approx(cc.beta_hat, rel=1e-12)
    assert full.n_used == cc.n_used == panel.n_records


def test_pp_benchmarks_with_missingness_differ():
    from pyppiv.pipeline import run_pp_benchmarks

    panel = helpers.make_panel([30] * 6, seed=14, missing_rate=0.3)
    pp = np.random.default_rng(14).random(panel.n_records)
    full, cc = run_pp_benchmarks(panel.replace(true_pp=pp))

    assert full.n_used == panel.n_records
    assert cc.n_used == int((~panel.r.any(axis=1)).sum())


def test_pp_benchmarks_need_true_preference():
    from pyppiv.exceptions import MissingTruePreference
    from pyppiv.pipeline import run_pp_benchmarks

    with pytest.raises(MissingTruePreference):
        run_pp_benchmarks(helpers.make_panel([10, 10]))


def test_true_preference_generator_b_uses_expit():
    from pyppiv.numerics import expit
    from pyppiv.pipeline import true_preference

    panel = helpers.make_panel([5, 5])
    theta = np.linspace(-2, 2, 10)
    pref = true_preference(panel.replace(true_theta=theta, generator="B"))

    assert np.allclose(pref, expit(theta))


def test_empty_analysis_carries_ledger():
    from pyppiv.exceptions import EmptyResultError
    from pyppiv.pipeline import run_method_with_ledger

    panel = helpers.make_panel([4, 6, 3], seed=15)
    with pytest.raises(EmptyResultError) as exc:
        run_method_with_ledger(panel, "prev10patient")

    assert exc.value.ledger.status == "no_data"
    assert exc.value.ledger.n_records_in == 13


def test_too_few_records_for_the_design_is_no_data():
    from pyppiv.exceptions import EmptyResultError
    from pyppiv.pipeline import run_analysis, run_method_with_ledger

    panel = helpers.make_panel([6, 6], seed=15)
    message = "2 records left for 4 coefficients"
    with pytest.raises(EmptyResultError, match=message) as exc:
        run_method_with_ledger(panel, "prev5patient")

    assert exc.value.ledger.status == "no_data"
    assert exc.value.ledger.n_dropped_instrument == 10
    assert exc.value.ledger.dropped_provider_ids == ("p1", "p2")
    (outcome,) = run_analysis(panel, ["prev5patient"])
    assert outcome.no_data


def test_ledger_names_dropped_providers():
    from pyppiv.pipeline import run_analysis
    from pyppiv.storage import results_frame

    panel = helpers.make_panel([1, 8, 8, 2], seed=18)
    outcomes = run_analysis(panel, ["prevpatient", "prev2patient"])

    assert outcomes[0].ledger.dropped_provider_ids == ("p1",)
    assert outcomes[1].ledger.dropped_provider_ids == ("p1", "p4")
    assert outcomes[1].ledger.providers_dropped == 2
    frame = results_frame(outcomes)
    assert frame["dropped_provider_ids"].tolist() == ["p1", "p1;p4"]



def test_run_analysis_continues_past_failures(caplog):
    from pyppiv.pipeline import run_analysis

    panel = helpers.make_panel([8] * 6, seed=16, shares=[0.2, 0.8, 0.4, 0.6, 0.3, 0.7])
    methods = ["prevpatient", "prev10patient", "allprop", "observational"]
    outcomes = run_analysis(panel, methods)

    assert [o.method for o in outcomes] == [
        "prevpatient",
        "prev10patient",
        "allprop",
        "observational",
    ]
    assert [o.ok for o in outcomes] == [True, False, True, True]
    assert outcomes[1].no_data
    assert outcomes[1].ledger.status == "no_data"
    assert "no data" in caplog.text


def test_common_sample():
    from pyppiv.pipeline import common_sample, run_analysis

    panel = helpers.make_panel([3, 8, 12, 20], seed=17, missing_rate=0.2)
    shared = common_sample(panel, ["prevpatient", "prev5patient", "allprop"])

    assert not shared.r.any()
    assert shared.provider_sizes().min() >= 6

    outcomes = run_analysis(
        panel, ["prevpatient", "allprop"], use_common_sample=True
    )
    assert all(o.ledger.n_records_in == shared.n_records for o in outcomes)

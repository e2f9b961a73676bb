"""Monte-Carlo acceptance checks on calibrated coefficients.

Run with ``pytest -m slow``; a full pass takes several minutes. The default
50 replications per cell use widened bands; ``--acceptance-reps 200`` runs
the tight bands.
"""

from os import path
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from tests import helpers


pytestmark = pytest.mark.slow

FULL_REPS = 200
N_PROVIDERS = 100
SEED = 20240101


def _scenario(generator, n_j, missingness, coefficients=None, n_reps=50):
    from pyppiv.models import Link, ScenarioConfig, default_coefficients

    return ScenarioConfig(
        generator=generator,
        n_providers=N_PROVIDERS,
        n_j=n_j,
        missingness=missingness,
        target_missing_rate=0.4,
        n_reps=n_reps,
        seed=SEED,
        coefficients=coefficients or default_coefficients(generator),
        link=Link.LOGIT,
        se_kind="naive",
        cell=0,
    )


@pytest.fixture(scope="module")
def bands(request):
    """tolerances for the replication count in use"""
    n_reps = request.config.getoption("--acceptance-reps")
    if n_reps >= FULL_REPS:
        return SimpleNamespace(
            n_reps=n_reps, mcse=3, coverage=(92.5, 99.5), upper=99.5, robust=90
        )
    # one binomial sd of a 90% coverage over 50 replications is 4.2 points
    return SimpleNamespace(
        n_reps=n_reps, mcse=4, coverage=(90, 100), upper=100, robust=86
    )


@pytest.fixture(scope="module")
def calibrated():
    from pyppiv.models import Generator, Missingness
    from pyppiv.simulation import calibrate

    return {
        g: calibrate(
            _scenario(g, 408, Missingness.MNAR), n_large=100_000, seed=1
        ).coefficients
        for g in Generator
    }


@pytest.fixture(scope="module")
def metrics(calibrated, bands):
    """metrics of a cell keyed by method, run once per module"""
    from pyppiv.simulation import run_scenario

    methods = [
        "prevpatient",
        "prev2patient",
        "prev5patient",
        "prev10patient",
        "allprop",
        "alldichmean",
        "alldichmedian",
        "epp",
        "epp_rirs",
        "star",
    ]
    cache = {}

    def _metrics(generator, n_j, missingness):
        key = (generator, n_j, missingness)
        if key not in cache:
            scenario = _scenario(
                generator, n_j, missingness, calibrated[generator], bands.n_reps
            )
            result = run_scenario(scenario, methods, n_workers=4)
            cache[key] = ({m.method: m for m in result.metrics}, result)
        return cache[key]

    return _metrics


def _within(row, band, n_mcse):
    return abs(row.bias) <= max(band, n_mcse * row.mcse)


def test_constructors_match_oracles_on_random_panels():
    from pyppiv.construct import z_all_dich, z_all_prev_prop, z_all_prop, z_prev_b

    rng = np.random.default_rng(0)
    for k in range(1000):
        sizes = list(rng.integers(1, 51, size=rng.integers(1, 11)))
        panel = helpers.make_panel(sizes, seed=k, p_treat=rng.random())
        bounds = panel.provider_bounds()
        blocks = [list(panel.x[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])]

        for b in (1, 2, 5, 10):
            expected = [v for block in blocks for v in helpers.brute_prev_b(block, b)]
            assert helpers.as_optional(z_prev_b(panel, b).values) == expected
        expected = [v for block in blocks for v in helpers.brute_running_share(block)]
        assert helpers.as_optional(z_all_prev_prop(panel).values) == expected

        shares = [sum(block) / len(block) for block in blocks]
        expected = [s for s, block in zip(shares, blocks) for _ in block]
        assert list(z_all_prop(panel).values) == expected
        if len(blocks) < 2 or len(set(shares)) == 1:
            continue
        for center, cut in (("mean", np.mean(shares)), ("median", np.median(shares))):
            expected = [
                float(s > cut) for s, block in zip(shares, blocks) for _ in block
            ]
            assert list(z_all_dich(panel, center).values) == expected



@pytest.mark.parametrize("generator", ["A", "B"])
def test_true_preference_benchmark_is_unbiased(metrics, bands, generator):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator(generator), 408, Missingness.NONE)
    low, high = bands.coverage

    assert _within(rows["pp"], 0.03, bands.mcse)
    assert low <= rows["pp"].coverage <= high


@pytest.mark.parametrize("generator", ["A", "B"])
@pytest.mark.parametrize("n_j", [24, 408])
def test_observational_estimate_is_confounded(metrics, generator, n_j):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator(generator), n_j, Missingness.NONE)
    obs = rows["observational"]

    assert obs.coverage <= 5
    assert abs(obs.bias) > 10 * obs.mcse


def test_large_providers_recover_the_effect(metrics, bands):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator.A, 408, Missingness.NONE)

    for method in ("epp", "epp_rirs", "star"):
        assert 90 <= rows[method].coverage <= bands.upper, method
        assert abs(rows[method].bias) <= 0.05, method


def test_small_providers_bias_the_effect(metrics):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator.A, 24, Missingness.NONE)

    for method in ("epp", "epp_rirs", "star"):
        assert abs(rows[method].bias) >= 0.1, method


def test_misspecified_constant_preference(metrics):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator.B, 408, Missingness.NONE)

    assert _within(rows["epp_rirs"], 0.1, 3)
    for method in ("allprop", "alldichmean", "alldichmedian"):
        assert abs(rows[method].bias) >= 0.3, method
        assert rows[method].coverage <= 90, method


@pytest.mark.parametrize("generator", ["A", "B"])
def test_mnar_robustness(metrics, bands, generator):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator(generator), 408, Missingness.MNAR)

    for method in ("epp", "epp_rirs"):
        assert rows[method].coverage >= bands.robust, method
    assert rows["pp_cc"].bias > 10 * rows["pp_cc"].mcse
    assert _within(rows["pp"], 0.03, bands.mcse)
    if generator == "B":
        return
    prev_b = ["prevpatient", "prev2patient", "prev5patient", "prev10patient"]
    for method in ["star", "allprop", *prev_b]:
        assert rows[method].coverage <= 50, method
        assert rows[method].bias > 10 * rows[method].mcse, method


def test_instrument_strength_grows_with_window(metrics):
    from pyppiv.models import Generator, Missingness

    rows, _ = metrics(Generator.A, 408, Missingness.NONE)
    mean_f = [rows[m].mean_f for m in ("prev10patient", "prev5patient", "prev2patient")]

    assert mean_f == sorted(mean_f, reverse=True)
    assert rows["prev2patient"].mean_f > rows["prevpatient"].mean_f
    assert rows["prevpatient"].mean_f < 10


def test_metric_identity_on_a_run(metrics):
    from pyppiv.models import Generator, Missingness

    rows, result = metrics(Generator.A, 408, Missingness.NONE)
    for method, row in rows.items():
        betas = np.array(
            [r.beta_hat for r in result.replications if r.method == method and r.ok]
        )
        assert row.rmse ** 2 == pytest.approx(row.bias ** 2 + betas.var(), abs=1e-10)


def test_change_detection_finds_hard_flips():
    from pyppiv.construct import abrahamowicz_detect

    rng = np.random.default_rng(3)
    found = 0
    for _ in range(200):
        x = np.concatenate([rng.random(50) < 0.1, rng.random(50) < 0.9]).astype(float)
        decision = abrahamowicz_detect(x)
        found += bool(decision.changed and abs(decision.i_star - 50) <= 5)

    assert found >= 180


def _constant_preference_flags(margin):
    from pyppiv.construct import abrahamowicz_detect

    rng = np.random.default_rng(4)
    flags = 0
    for _ in range(200):
        x = (rng.random(100) < 0.5).astype(float)
        flags += abrahamowicz_detect(x, margin=margin).changed
    return flags


def test_change_detection_on_constant_preference():
    # about 64% of constant providers clear the deviance margin of 4
    assert _constant_preference_flags(4.0) <= 150


def test_stricter_margin_limits_false_changes():
    from pyppiv.construct import abrahamowicz_detect

    rng = np.random.default_rng(3)
    x = np.concatenate([rng.random(50) < 0.1, rng.random(50) < 0.9]).astype(float)

    assert _constant_preference_flags(12.0) <= 50
    assert abrahamowicz_detect(x, margin=12.0).changed


def test_simulate_is_identical_across_worker_counts(tmp_path):
    from pyppiv.cli import main

    outputs = []
    for workers in ("1", "3"):
        out = str(tmp_path / workers)
        args = ["simulate", helpers.CONFIG_FILENAME, "--workers", workers, "--out", out]
        assert main(args) == 0
        with open(path.join(out, "replications.csv"), "rb") as file:
            outputs.append(file.read())

    assert outputs[0] == outputs[1]


def test_analyze_ledger_matches_independent_count(tmp_path):
    from pyppiv.cli import main
    from pyppiv.storage import read_table

    exported, analysed = str(tmp_path / "export"), str(tmp_path / "analysis")
    args = [
        "export",
        helpers.CONFIG_FILENAME,
        "--missingness",
        "mnar",
        "--out",
        exported,
    ]
    assert main(args) == 0
    methods = {
        "prevpatient": 1,
        "prev2patient": 2,
        "prev5patient": 5,
        "prev10patient": 10,
        "allprevprop": 1,
        "allprop": 0,
        "epp": 0,
    }
    csv_name = path.join(exported, "panel.csv")
    status = main(
        [
            "analyze",
            csv_name,
            path.join(exported, "columns.cfg"),
            "--methods",
            ",".join(methods),
            "--out",
            analysed,
        ]
    )
    assert status == 0

    panel = pd.read_csv(csv_name, skiprows=1)
    partial = [c for c in panel.columns if panel[c].isna().any()]
    complete = panel.dropna(subset=partial)
    results = read_table(path.join(analysed, "results.csv"))[0].set_index("method")

    for method, lag in methods.items():
        row = results.loc[method]
        sample = panel if method == "epp" else complete
        n_min = 2 if method in ("allprevprop", "allprop", "epp") else lag + 1
        sizes = sample.groupby("provider").size()
        kept = sizes[sizes >= n_min]

        assert row["n_dropped_complete_case"] == len(panel) - len(sample), method
        assert row["n_dropped_provider_size"] == len(sample) - kept.sum(), method
        assert row["n_dropped_instrument"] == lag * len(kept), method
        assert row["n_used"] == kept.sum() - lag * len(kept), method
        assert row["j_used"] == len(kept), method

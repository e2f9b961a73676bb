"""Test the pyppiv command line."""

import json
from os import path

import pytest

from tests import helpers


def _read(filename):
    with open(filename, "rb") as file:
        return file.read()


def _config(tmp_path, text):
    filename = tmp_path / "study.cfg"
    filename.write_text(text)
    return str(filename)


def test_simulate_is_reproducible(tmp_path, capsys):
    from pyppiv.cli import main

    first, second = str(tmp_path / "first"), str(tmp_path / "second")
    args = ["simulate", helpers.CONFIG_FILENAME, "--reps", "2"]

    assert main([*args, "--out", first]) == 0
    assert main([*args, "--out", second]) == 0

    for name in ("metrics.csv", "fstats.csv", "replications.csv"):
        assert _read(path.join(first, name)) == _read(path.join(second, name))

    with open(path.join(first, "manifest.json")) as file:
        manifest = json.load(file)
    digest = _read(path.join(first, "metrics.csv")).decode().splitlines()[0]
    assert digest == f"# manifest_digest={manifest['config_digest']}"
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 11
    assert [r["method"] for r in manifest["requirements"]] == [
        "prevpatient",
        "allprop",
        "star",
        "observational",
        "pp",
        "pp_cc",
    ]
    assert "star" in capsys.readouterr().out


def test_simulate_rejects_bad_config(tmp_path, capsys):
    from pyppiv.cli import EXIT_CONFIG, main

    filename = _config(tmp_path, "[run]\nreps = 1\n")

    assert main(["simulate", filename, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert f"{filename}:2: [run] reps" in capsys.readouterr().err


def test_simulate_replication_failure_exits_three(tmp_path, capsys, mocker):
    from pyppiv.cli import EXIT_RUNTIME, main
    from pyppiv.exceptions import ReplicationError

    run = mocker.patch(
        "pyppiv.cli.run_scenario",
        side_effect=ReplicationError(77, "bad draw", {"cell": "A-24-none"}),
    )
    args = ["simulate", helpers.CONFIG_FILENAME, "--out", str(tmp_path)]

    assert main(args) == EXIT_RUNTIME
    assert run.call_count == 1
    assert "77" in capsys.readouterr().err


def test_unknown_method_is_a_usage_error(capsys):
    from pyppiv.cli import main

    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--methods", "allprop,ivreg"])

    assert exc.value.code == 2
    assert "unknown method 'ivreg'" in capsys.readouterr().err


def test_export_then_analyze(tmp_path):
    from pyppiv.cli import main
    from pyppiv.config import load_study_config
    from pyppiv.models import Generator, Missingness
    from pyppiv.pipeline import run_method
    from pyppiv.simulation import simulate_replication
    from pyppiv.storage import read_table

    exported, analysed = str(tmp_path / "export"), str(tmp_path / "analysis")
    assert (
        main(
            [
                "export",
                helpers.CONFIG_FILENAME,
                "--missingness",
                "mnar",
                "--rep",
                "1",
                "--out",
                exported,
            ]
        )
        == 0
    )
    csv_name = path.join(exported, "panel.csv")
    spec_name = path.join(exported, "columns.cfg")
    methods = "prevpatient,allprop"
    args = ["analyze", csv_name, spec_name, "--methods", methods, "--out", analysed]
    assert main(args) == 0

    scenario = next(
        s
        for s in load_study_config(helpers.CONFIG_FILENAME).scenarios()
        if s.generator is Generator.A and s.missingness is Missingness.MNAR
    )
    dataset, _ = simulate_replication(scenario, 1)
    results, _ = read_table(path.join(analysed, "results.csv"))

    assert results["method"].tolist() == ["prevpatient", "allprop"]
    for method, beta_hat in zip(results["method"], results["beta_hat"]):
        assert beta_hat == pytest.approx(run_method(dataset, method).beta_hat, rel=1e-5)
    assert path.isfile(path.join(analysed, "manifest.json"))


def test_analyze_without_data_exits_four(tmp_path):
    from pyppiv.cli import EXIT_NO_DATA, main
    from pyppiv.storage import panel_frame, read_table, write_table

    panel = helpers.make_panel([4, 4, 4], seed=5)
    csv_name = write_table(panel_frame(panel), str(tmp_path / "small.csv"), "d", None)
    out = str(tmp_path / "out")

    methods = "prevpatient,prev5patient"
    status = main(["analyze", csv_name, "--methods", methods, "--out", out])

    assert status == EXIT_NO_DATA
    results, digest = read_table(path.join(out, "results.csv"))
    assert results["error"].notna().tolist() == [False, True]
    assert len(digest) == 64


def test_analyze_with_bad_spec_exits_two(tmp_path, capsys):
    from pyppiv.cli import EXIT_CONFIG, main
    from pyppiv.storage import panel_frame, write_table

    panel = helpers.make_panel([6, 6], seed=5)
    csv_name = write_table(panel_frame(panel), str(tmp_path / "p.csv"), "d", None)
    spec_name = tmp_path / "columns.cfg"
    spec_name.write_text(
        "[columns]\nprovider = clinic\norder = order\ntreatment = treatment\n"
        "outcome = outcome\n"
    )

    status = main(["analyze", csv_name, str(spec_name), "--out", str(tmp_path / "out")])

    assert status == EXIT_CONFIG
    assert "missing columns clinic" in capsys.readouterr().err


def test_describe(tmp_path, capsys):
    from pyppiv.cli import main
    from pyppiv.storage import panel_frame, write_table

    panel = helpers.make_panel([12, 12], seed=5, missing_rate=0.5)
    csv_name = write_table(panel_frame(panel), str(tmp_path / "p.csv"), "d", None)

    assert main(["describe", csv_name]) == 0

    out = capsys.readouterr().out
    assert "== periods ==" in out
    assert "== providers ==" in out
    assert "== missingness ==" in out
    assert "bmi" in out


def test_calibrate_writes_loadable_coefficients(tmp_path):
    from pyppiv.cli import main
    from pyppiv.config import load_study_config
    from pyppiv.storage import read_table

    filename = _config(
        tmp_path,
        "[run]\ncalibration_size = 2000\n\n"
        "[grid]\ngenerators = A\nn_j = 24\nmissingness = mnar\n",
    )
    out = str(tmp_path / "out")

    assert main(["calibrate", filename, "--out", out]) == 0

    study = load_study_config(path.join(out, "coefficients.cfg"))
    audit, digest = read_table(path.join(out, "calibration.csv"))
    gamma_x0 = audit["value"][0]
    assert study.coefficients.A.x_model_a.gamma_x0 == pytest.approx(gamma_x0, rel=1e-5)
    assert audit["parameter"].tolist() == [
        "x_model_a.gamma_x0",
        "y_model.sigma_y",
        "mnar_model.gamma_r0",
    ]
    assert (audit["generator"] == "A").all()
    assert digest == load_study_config(filename).digest


def test_simulate_refuses_uncalibrated_coefficients(tmp_path, capsys):
    from pyppiv.cli import EXIT_CONFIG, main

    filename = _config(
        tmp_path,
        "[grid]\ngenerators = A\nn_j = 24\nmissingness = none\nn_providers = 4\n\n"
        "[coefficients.y_model]\nsigma_y = 1.1\n",
    )
    out = tmp_path / "out"

    assert main(["simulate", filename, "--reps", "1", "--out", str(out)]) == EXIT_CONFIG
    assert "generator A: coefficients are not calibrated" in capsys.readouterr().err
    assert not out.exists()


def test_simulate_uses_calibrated_defaults(tmp_path, mocker):
    import pandas as pd

    from pyppiv.cli import main
    from pyppiv.models import Generator, default_coefficients
    from pyppiv.simulation import run_scenario
    from pyppiv.storage import load_manifest, read_table

    shipped = {
        g.value: default_coefficients(g).replace(calibrated=True) for g in Generator
    }
    mocker.patch("pyppiv.cli.shipped_coefficients", return_value=shipped)
    mocker.patch(
        "pyppiv.cli.shipped_audit",
        return_value=pd.DataFrame(
            {"generator": ["A", "B"], "parameter": ["y_model.sigma_y"] * 2}
        ),
    )
    run = mocker.patch("pyppiv.cli.run_scenario", wraps=run_scenario)
    filename = _config(
        tmp_path,
        "[run]\nmethods = allprop\nworkers = 1\n\n"
        "[grid]\ngenerators = A\nn_j = 24\nmissingness = none\nn_providers = 6\n",
    )
    out = str(tmp_path / "out")

    assert main(["simulate", filename, "--reps", "1", "--out", out]) == 0

    assert run.call_args.args[0].coefficients.calibrated
    audit, _ = read_table(path.join(out, "calibration.csv"))
    assert audit["generator"].tolist() == ["A"]
    assert "calibration.csv" in load_manifest(out).outputs


def test_simulate_calibrate_flag_writes_audit(tmp_path):
    from pyppiv.cli import main
    from pyppiv.storage import read_table

    filename = _config(
        tmp_path,
        "[run]\nmethods = allprop\nworkers = 1\ncalibration_size = 2000\n\n"
        "[grid]\ngenerators = B\nn_j = 24\nmissingness = mnar\nn_providers = 6\n\n"
        "[coefficients.y_model]\nsigma_y = 1.1\n",
    )
    out = str(tmp_path / "out")
    args = ["simulate", filename, "--reps", "1", "--calibrate", "--out", out]

    assert main(args) == 0

    audit, _ = read_table(path.join(out, "calibration.csv"))
    assert (audit["generator"] == "B").all()
    assert "mnar_model.gamma_r0" in audit["parameter"].tolist()


def test_analyze_with_too_few_records_exits_four(tmp_path):
    from pyppiv.cli import EXIT_NO_DATA, main
    from pyppiv.storage import panel_frame, read_table, write_table

    panel = helpers.make_panel([6, 6, 6], seed=5)
    csv_name = write_table(panel_frame(panel), str(tmp_path / "six.csv"), "d", None)
    out = str(tmp_path / "out")

    status = main(["analyze", csv_name, "--methods", "prev5patient", "--out", out])

    assert status == EXIT_NO_DATA
    results, _ = read_table(path.join(out, "results.csv"))
    assert results["status"].tolist() == ["no_data"]
    assert results["dropped_provider_ids"].tolist() == ["p1;p2;p3"]

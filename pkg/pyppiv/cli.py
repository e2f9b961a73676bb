"""Command line interface: ``pyppiv simulate|analyze|describe|calibrate|export``."""

import argparse
import logging
import os
import sys
from os import path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from pyppiv import __version__
from pyppiv.config import (
    DEFAULT_METHODS,
    StudyConfig,
    default_study_config,
    load_column_spec,
    load_study_config,
    render_coefficients,
    render_column_spec,
)
from pyppiv.data import validate
from pyppiv.defaults import is_default, shipped_audit, shipped_coefficients
from pyppiv.describe import describe
from pyppiv.exceptions import (
    ConfigError,
    PyppivException,
    ReplicationError,
    SchemaError,
)
from pyppiv.models import (
    Generator,
    Link,
    Missingness,
    RunManifest,
    method_label,
    parse_method,
)
from pyppiv.pipeline import requirements_table, run_analysis
from pyppiv.simulation import (
    calibrate,
    f_stat_table,
    run_scenario,
    scenario_methods,
    simulate_replication,
)
from pyppiv.storage import (
    dump_manifest,
    infer_column_spec,
    metrics_frame,
    panel_frame,
    read_panel_csv,
    replications_frame,
    results_frame,
    utc_now,
    write_table,
)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_NO_DATA = 4

SHOWN_COLUMNS = (
    "method",
    "beta_hat",
    "se",
    "ci_low",
    "ci_high",
    "f_statistic",
    "n_used",
    "j_used",
)


def _methods(value: str) -> List[str]:
    try:
        return [parse_method(m.strip()) for m in value.split(",") if m.strip()]
    except PyppivException as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _out_dir(directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    return directory


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "n_reps": args.reps,
        "methods": args.methods,
        "link": args.link,
        "se": args.se,
        "workers": args.workers,
        "calibrate": True if args.calibrate else None,
    }


def _study(args: argparse.Namespace) -> StudyConfig:
    if args.config:
        return load_study_config(args.config, _overrides(args))
    return default_study_config(_overrides(args))


def _manifest(
    command: str,
    digest: str,
    seed: Optional[int],
    methods: Sequence[str],
    started: Any,
    outputs: Sequence[str],
) -> RunManifest:
    finished = utc_now()
    return RunManifest(
        command=command,
        config_digest=digest,
        seed=seed,
        version=__version__,
        requirements=requirements_table(methods),
        started=started,
        finished=finished,
        elapsed_seconds=(finished - started).total_seconds(),
        outputs=[path.basename(o) for o in outputs],
    )


def _calibrated(study: StudyConfig) -> Tuple[StudyConfig, List[Dict[str, Any]]]:
    """Study with every generator of its grid calibrated at the largest n_j."""
    coefficients = dict(study.coefficients.__dict__)
    audit: List[Dict[str, Any]] = []
    for scenario in study.scenarios():
        key = scenario.generator.value
        if scenario.n_j != max(study.grid.n_j) or coefficients[key].calibrated:
            continue
        result = calibrate(
            scenario, n_large=study.run.calibration_size, seed=study.run.seed
        )
        coefficients[key] = result.coefficients
        audit.extend(dict(vars(row), generator=key) for row in result.audit)
    return study.replace(coefficients=coefficients), audit  # type: ignore


def _resolved(study: StudyConfig) -> Tuple[StudyConfig, pd.DataFrame]:
    """Study whose grid generators all carry calibrated coefficient sets.

    ``--calibrate`` calibrates what is not yet calibrated. Otherwise default
    sets under the logit link are swapped for the cached calibrated defaults,
    and any other uncalibrated set is refused.

    Args:
        study: The loaded study.

    Returns:
        The study and the calibration audit of the sets it now uses.

    Raises:
        ConfigError: For an uncalibrated custom set without ``--calibrate``.

    """
    if study.run.calibrate:
        study, rows = _calibrated(study)
        return study, pd.DataFrame(rows)

    coefficients = dict(study.coefficients.__dict__)
    pending = [g for g in study.grid.generators if not coefficients[g].calibrated]
    if not pending:
        return study, pd.DataFrame()
    refused = [
        g
        for g in pending
        if study.run.link != Link.LOGIT.value or not is_default(g, coefficients[g])
    ]
    if refused:
        raise ConfigError(
            "uncalibrated coefficients",
            [
                f"generator {g}: coefficients are not calibrated; pass --calibrate "
                "or use the output of `pyppiv calibrate`"
                for g in refused
            ],
        )
    shipped = shipped_coefficients()
    coefficients.update({g: shipped[g] for g in pending})
    logger.info("using calibrated default coefficients for %s", ", ".join(pending))
    audit = shipped_audit()
    if not audit.empty:
        audit = audit[audit["generator"].isin(pending)]
    return study.replace(coefficients=coefficients), audit  # type: ignore


def cmd_simulate(args: argparse.Namespace) -> int:
    """Run the scenario grid and write metrics, F table and replications.

    Args:
        args: Parsed arguments.

    Returns:
        The exit status.

    """
    started = utc_now()
    study, audit = _resolved(_study(args))
    out = _out_dir(args.out)

    metrics, replications = [], []
    for scenario in study.scenarios():
        result = run_scenario(
            scenario, study.methods, n_workers=study.run.workers, progress=args.progress
        )
        metrics.extend(result.metrics)
        replications.extend(result.replications)
        if "star" in study.methods:
            logger.info(
                "%s: detected changes %s", scenario.label, vars(result.change_counts)
            )

    outputs = [
        write_table(
            metrics_frame(metrics), path.join(out, "metrics.csv"), study.digest
        ),
        write_table(
            f_stat_table(metrics).reset_index(),
            path.join(out, "fstats.csv"),
            study.digest,
        ),
        write_table(
            replications_frame(replications),
            path.join(out, "replications.csv"),
            study.digest,
            float_format=None,
        ),
    ]
    if not audit.empty:
        outputs.append(
            write_table(audit, path.join(out, "calibration.csv"), study.digest)
        )
    manifest = _manifest(
        "simulate",
        study.digest,
        study.run.seed,
        scenario_methods(study.methods),
        started,
        outputs,
    )
    dump_manifest(manifest, out)
    print(_metrics_text(metrics))
    return EXIT_OK


def _metrics_text(metrics: Sequence[Any]) -> str:
    frame = metrics_frame(metrics)
    if frame.empty:
        return "no results"
    frame["method"] = [method_label(m) for m in frame["method"]]
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def _column_spec(args: argparse.Namespace) -> Any:
    if args.spec:
        return load_column_spec(args.spec)
    return infer_column_spec(args.csv)


def cmd_analyze(args: argparse.Namespace) -> int:
    """Apply every requested method to a user CSV.

    Args:
        args: Parsed arguments.

    Returns:
        The exit status; 4 when a method had no data left.

    """
    started = utc_now()
    spec = _column_spec(args)
    dataset = read_panel_csv(args.csv, spec)
    violations = validate(dataset)
    if violations:
        for violation in violations[:50]:
            print(f"invalid data: {violation}", file=sys.stderr)
        return EXIT_CONFIG

    methods = args.methods or [*DEFAULT_METHODS, "observational"]
    outcomes = run_analysis(dataset, methods, args.se or "naive", args.common_sample)
    out = _out_dir(args.out)
    frame = results_frame(outcomes)
    outputs = [write_table(frame, path.join(out, "results.csv"), spec.digest)]
    manifest = _manifest("analyze", spec.digest, None, methods, started, outputs)
    dump_manifest(manifest, out)

    shown = frame[list(SHOWN_COLUMNS)]
    shown = shown.assign(method=[method_label(m) for m in shown["method"]])
    print(shown.to_string(index=False, float_format=lambda v: f"{v:.4f}"))

    if any(o.error and not o.no_data for o in outcomes):
        return EXIT_RUNTIME
    if any(o.no_data for o in outcomes):
        return EXIT_NO_DATA
    return EXIT_OK


def cmd_describe(args: argparse.Namespace) -> int:
    """Print per period shares, provider summary and missingness of a CSV.

    Args:
        args: Parsed arguments.

    Returns:
        The exit status.

    """
    dataset = read_panel_csv(args.csv, _column_spec(args))
    for name, table in describe(dataset).items():
        print(f"== {name} ==")
        print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        print()
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    """Calibrate the coefficient set of every generator of the grid.

    Args:
        args: Parsed arguments.

    Returns:
        The exit status.

    """
    study = _study(args)
    coefficients = {}
    audit = []
    n_j = max(study.grid.n_j)
    for generator in study.grid.generators:
        scenario = next(
            s
            for s in study.scenarios()
            if s.generator.value == generator and s.n_j == n_j
        )
        result = calibrate(
            scenario, n_large=study.run.calibration_size, seed=study.run.seed
        )
        coefficients[generator] = result.coefficients
        audit.extend(dict(vars(row), generator=generator) for row in result.audit)

    out = _out_dir(args.out)
    with open(path.join(out, "coefficients.cfg"), "w") as file:
        file.write(render_coefficients(coefficients))
    frame = pd.DataFrame(audit)
    write_table(frame, path.join(out, "calibration.csv"), study.digest)
    print(frame.to_string(index=False))
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    """Write one simulated replication as CSV plus its column specification.

    Args:
        args: Parsed arguments.

    Returns:
        The exit status.

    """
    study, _ = _resolved(_study(args))
    generator = Generator(args.generator)
    missingness = Missingness(args.missingness)
    scenario = next(
        (
            s
            for s in study.scenarios()
            if s.generator is generator and s.missingness is missingness
            and (args.n_j is None or s.n_j == args.n_j)
        ),
        None,
    )
    if scenario is None:
        raise ConfigError(
            "no such cell in the grid",
            [
                f"generator={generator.value} n_j={args.n_j} "
                f"missingness={missingness.value}"
            ],
        )
    dataset, seed = simulate_replication(scenario, args.rep)
    out = _out_dir(args.out)
    frame = panel_frame(dataset)
    csv_name = path.join(out, "panel.csv")
    write_table(frame, csv_name, study.digest, float_format=None)

    schema = dataset.covariate_schema
    spec_text = render_column_spec(
        infer_column_spec(csv_name).replace(  # type: ignore
            observed=list(schema.obs), partial=list(schema.miss)
        )
    )
    with open(path.join(out, "columns.cfg"), "w") as file:
        file.write(spec_text)
    logger.info(
        "exported %s replication %d (seed %d) to %s",
        scenario.label,
        args.rep,
        seed,
        out,
    )
    return EXIT_OK


def _add_study_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", help="study configuration (INI)")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--reps", type=int, help="replications per cell")
    parser.add_argument(
        "--methods", type=_methods, help="comma separated method names"
    )
    parser.add_argument(
        "--calibrate", action="store_true", help="calibrate coefficients first"
    )
    parser.add_argument("--link", choices=["logit", "linear"], help="treatment link")
    parser.add_argument(
        "--se", choices=["naive", "corrected"], help="standard error kind"
    )
    parser.add_argument("--workers", type=int, help="worker processes")
    parser.add_argument("--out", default="results", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the ``pyppiv`` command.

    Returns:
        The parser.

    """
    parser = argparse.ArgumentParser(
        prog="pyppiv", description="Preference-based instrumental variables."
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="run the simulation grid")
    _add_study_arguments(simulate)
    simulate.add_argument("--progress", action="store_true", help="show a progress bar")
    simulate.set_defaults(func=cmd_simulate)

    analyze = commands.add_parser("analyze", help="apply the methods to a CSV")
    analyze.add_argument("csv", help="input CSV")
    analyze.add_argument("spec", nargs="?", help="column specification (INI)")
    analyze.add_argument(
        "--methods", type=_methods, help="comma separated method names"
    )
    analyze.add_argument(
        "--se", choices=["naive", "corrected"], help="standard error kind"
    )
    analyze.add_argument(
        "--common-sample",
        action="store_true",
        help="run every method on one shared sample",
    )
    analyze.add_argument("--out", default="results", help="output directory")
    analyze.set_defaults(func=cmd_analyze)

    desc = commands.add_parser("describe", help="describe a CSV")
    desc.add_argument("csv", help="input CSV")
    desc.add_argument("spec", nargs="?", help="column specification (INI)")
    desc.set_defaults(func=cmd_describe)

    calib = commands.add_parser("calibrate", help="calibrate the coefficient sets")
    _add_study_arguments(calib)
    calib.set_defaults(func=cmd_calibrate)

    export = commands.add_parser(
        "export", help="write one simulated replication as CSV"
    )
    _add_study_arguments(export)
    export.add_argument(
        "--generator", choices=[g.value for g in Generator], default="A"
    )
    export.add_argument(
        "--missingness", choices=[m.value for m in Missingness], default="none"
    )
    export.add_argument("--n-j", type=int, dest="n_j", help="patients per provider")
    export.add_argument("--rep", type=int, default=0, help="replication index")
    export.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point of the ``pyppiv`` command.

    Args:
        argv: Arguments without the program name; defaults to ``sys.argv``.

    Returns:
        0 on success, 2 for configuration or schema errors, 3 for runtime
        failures and 4 when a method had no data left.

    """
    parser = build_parser()
    args = parser.parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplicationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except PyppivException as exc:
        logger.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

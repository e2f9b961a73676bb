"""CSV input, result tables and run manifests."""

import json
import logging
from datetime import datetime
from os import path
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pytz
from dateutil import parser as date_parser

from pyppiv.config import FILE_ORDER, ColumnSpec, make_column_spec
from pyppiv.exceptions import SchemaError
from pyppiv.models import (
    CovariateSchema,
    EstimateResultSchema,
    LedgerRowSchema,
    MetricsRow,
    MetricsRowSchema,
    PanelDataset,
    ReplicationRow,
    ReplicationRowSchema,
    RunManifest,
    RunManifestSchema,
)


logger = logging.getLogger(__name__)

DIGEST_PREFIX = "# manifest_digest="
FLOAT_FORMAT = "%.6g"
MANIFEST_NAME = "manifest.json"


def _digest_rows(filename: str) -> int:
    try:
        with open(filename, "r") as file:
            return 1 if file.readline().startswith(DIGEST_PREFIX) else 0
    except OSError as exc:
        raise SchemaError(f"cannot read {filename}: {exc}") from exc


def _parse_dates(values: pd.Series, date_format: Optional[str]) -> pd.Series:
    parsed = []
    for row, value in values.items():
        try:
            if date_format:
                parsed.append(datetime.strptime(str(value), date_format))
            else:
                parsed.append(date_parser.parse(str(value)))
        except (ValueError, OverflowError) as exc:
            raise SchemaError(
                f"row {row + 1}: cannot parse date '{value}': {exc}"
            ) from exc
    return pd.Series(parsed, index=values.index)


def _order_keys(frame: pd.DataFrame, spec: ColumnSpec) -> pd.Series:
    if spec.order == FILE_ORDER:
        return pd.Series(np.arange(len(frame)), index=frame.index)
    column = frame[spec.order]
    if column.isna().any():
        raise SchemaError(f"column '{spec.order}' has missing values")
    if pd.api.types.is_numeric_dtype(column):
        return column
    return _parse_dates(column, spec.date_format)


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    try:
        return pd.to_numeric(frame[column]).to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"column '{column}' is not numeric: {exc}") from exc


def _numeric_block(frame: pd.DataFrame, columns: Sequence[str]) -> np.ndarray:
    if not columns:
        return np.empty((len(frame), 0))
    return np.column_stack([_numeric(frame, c) for c in columns])


def _treatment(frame: pd.DataFrame, spec: ColumnSpec) -> np.ndarray:
    column = frame[spec.treatment]
    if column.isna().any():
        raise SchemaError(f"column '{spec.treatment}' has missing values")
    numbers = pd.to_numeric(column, errors="coerce")
    treated = pd.to_numeric(pd.Series([spec.treated_value]), errors="coerce")[0]
    if numbers.notna().all() and not np.isnan(treated):
        if treated == 1:
            # 0/1 coding: other codes pass through for validate to report
            return numbers.to_numpy(dtype=float)
        levels = sorted(f"{v:g}" for v in set(numbers))
        values = numbers == treated
    else:
        text = column.astype(str).str.strip()
        levels = sorted(set(text))
        values = text == spec.treated_value
    if len(levels) > 2:
        raise SchemaError(
            f"column '{spec.treatment}' has more than two values: "
            f"{', '.join(levels[:5])}"
        )
    if not values.any():
        raise SchemaError(
            f"column '{spec.treatment}' never holds the treated value "
            f"'{spec.treated_value}' (found {', '.join(levels)})"
        )
    return values.to_numpy(dtype=float)


def read_panel_csv(filename: str, spec: ColumnSpec) -> PanelDataset:
    """Read a user CSV into a panel.

    Patients are ranked inside their provider by the order column, or by file
    row when the order is ``@row``; dates are parsed with `dateutil` unless
    ``date_format`` is given, and ties keep their file order.

    Args:
        filename: Path of the CSV file.
        spec: Column mapping.

    Returns:
        The `PanelDataset`.

    Raises:
        SchemaError: If columns are missing or hold unusable values.

    """
    try:
        frame = pd.read_csv(filename, skiprows=_digest_rows(filename))
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"cannot read {filename}: {exc}") from exc
    missing = [c for c in spec.columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"{filename}: missing columns {', '.join(missing)}")
    frame = frame.reset_index(drop=True)

    keys = pd.DataFrame(
        {
            "provider": frame[spec.provider].astype(str),
            "key": _order_keys(frame, spec),
            "row": np.arange(len(frame)),
        }
    )
    ranked = keys.sort_values(["key", "row"], kind="mergesort")
    order_index = ranked.groupby("provider", sort=False).cumcount().add(1).sort_index()

    time_index = None
    if spec.time:
        time_index = _numeric(frame, spec.time)
        if np.isnan(time_index).any():
            raise SchemaError(f"column '{spec.time}' has missing values")

    schema = CovariateSchema(obs=list(spec.observed), miss=list(spec.partial))
    w_obs = _numeric_block(frame, spec.observed)
    w_miss = _numeric_block(frame, spec.partial)
    dataset = PanelDataset.build(
        provider_labels=keys["provider"].tolist(),
        order_index=order_index.to_numpy(),
        x=_treatment(frame, spec),
        y=_numeric(frame, spec.outcome),
        w_obs=w_obs,
        w_miss=w_miss,
        covariate_schema=schema,
        time_index=None if time_index is None else time_index.astype(np.int64),
    )
    logger.info(
        "read %d records from %d providers in %s",
        dataset.n_records,
        dataset.n_providers,
        filename,
    )
    return dataset


def panel_frame(dataset: PanelDataset) -> pd.DataFrame:
    """Tabular view of a panel, one row per patient.

    Args:
        dataset: The panel.

    Returns:
        Columns ``provider``, ``order``, ``time``, ``treatment``, ``outcome``,
        one per covariate and, when simulated, ``true_pp``/``true_theta``.

    """
    columns = {
        "provider": np.asarray(dataset.provider_ids, dtype=object)[dataset.provider],
        "order": dataset.order_index,
        "time": dataset.time_index,
        "treatment": dataset.x.astype(int),
        "outcome": dataset.y,
    }
    for k, name in enumerate(dataset.covariate_schema.obs):
        columns[name] = dataset.w_obs[:, k]
    for k, name in enumerate(dataset.covariate_schema.miss):
        columns[name] = dataset.w_miss[:, k]
    for name in ("true_pp", "true_theta"):
        value = getattr(dataset, name)
        if value is not None:
            columns[name] = value
    return pd.DataFrame(columns)


def write_table(
    frame: pd.DataFrame,
    filename: str,
    digest: str,
    float_format: Optional[str] = FLOAT_FORMAT,
) -> str:
    """Write a CSV result table preceded by its manifest digest line.

    Args:
        frame: The table.
        filename: Destination path.
        digest: Digest of the configuration the table came from.
        float_format: printf style format; None writes full precision.

    Returns:
        ``filename``.

    """
    with open(filename, "w", newline="") as file:
        file.write(f"{DIGEST_PREFIX}{digest}\n")
        frame.to_csv(file, index=False, float_format=float_format, na_rep="")
    logger.debug("wrote %s (%d rows)", filename, len(frame))
    return filename


def read_table(filename: str) -> Tuple[pd.DataFrame, Optional[str]]:
    """Read a table written by `write_table`.

    Args:
        filename: Path of the table.

    Returns:
        The table and the digest from its first line, if any.

    """
    with open(filename, "r") as file:
        first = file.readline().strip()
    digest = first[len(DIGEST_PREFIX) :] if first.startswith(DIGEST_PREFIX) else None
    frame = pd.read_csv(filename, skiprows=1 if digest is not None else 0)
    return frame, digest


def metrics_frame(rows: Iterable[MetricsRow]) -> pd.DataFrame:
    """One row per (cell, method) with every performance metric.

    Args:
        rows: Metrics rows.

    Returns:
        The table in `MetricsRowSchema` column order.

    """
    schema = MetricsRowSchema()
    return pd.DataFrame(schema.dump(list(rows), many=True), columns=list(schema.fields))


def replications_frame(rows: Iterable[ReplicationRow]) -> pd.DataFrame:
    """One row per (cell, replication, method).

    Args:
        rows: Replication rows.

    Returns:
        The table in `ReplicationRowSchema` column order.

    """
    schema = ReplicationRowSchema()
    return pd.DataFrame(schema.dump(list(rows), many=True), columns=list(schema.fields))


def metrics_from_frame(frame: pd.DataFrame) -> List[MetricsRow]:
    """Metrics rows of a table read back with `read_table`.

    Args:
        frame: The table.

    Returns:
        `MetricsRow` instances.

    """
    records = frame.astype(object).where(frame.notna(), float("nan")).to_dict("records")
    return MetricsRowSchema().load(records, many=True)  # type: ignore


def results_frame(outcomes: Sequence[Any]) -> pd.DataFrame:
    """Estimates and preparation ledger of an analysis, one row per method.

    Args:
        outcomes: `AnalysisOutcome` instances.

    Returns:
        Estimate columns followed by ledger columns and an ``error`` column.

    """
    est_schema, ledger_schema = EstimateResultSchema(), LedgerRowSchema()
    est_columns = [c for c in est_schema.fields if c not in ("method", "notes")]
    rows = []
    for outcome in outcomes:
        row = {"method": outcome.method}
        if outcome.result is not None:
            dumped = est_schema.dump(outcome.result)
            row.update({c: dumped[c] for c in est_columns})
            row["notes"] = "; ".join(dumped["notes"])
        else:
            row.update({c: None for c in est_columns})
            row["notes"] = ""
        ledger = ledger_schema.dump(outcome.ledger)
        ledger["dropped_provider_ids"] = ";".join(ledger["dropped_provider_ids"])
        row.update({k: v for k, v in ledger.items() if k != "method"})
        row["error"] = outcome.error or ""
        rows.append(row)
    return pd.DataFrame(rows)


def utc_now() -> datetime:
    """Timezone aware current time in UTC.

    Returns:
        The current time.

    """
    return datetime.now(pytz.utc)


def dump_manifest(manifest: RunManifest, directory: str) -> str:
    """Write ``manifest.json`` into a result directory.

    Args:
        manifest: The manifest.
        directory: Result directory.

    Returns:
        Path of the written file.

    """
    filename = path.join(directory, MANIFEST_NAME)
    with open(filename, "w") as file:
        json.dump(RunManifestSchema().dump(manifest), file, indent=2)
    return filename


def load_manifest(directory: str) -> RunManifest:
    """Read ``manifest.json`` from a result directory.

    Args:
        directory: Result directory.

    Returns:
        The `RunManifest`.

    Raises:
        SchemaError: If the manifest is missing.

    """
    filename = path.join(directory, MANIFEST_NAME)
    if not path.isfile(filename):
        raise SchemaError(f"no {MANIFEST_NAME} in {directory}")
    with open(filename, "r") as file:
        return RunManifestSchema().load(json.load(file))  # type: ignore


_ROLE_NAMES = {
    "provider": ("provider_id", "provider"),
    "order": ("order_index", "order", "date"),
    "treatment": ("x", "treatment"),
    "outcome": ("y", "outcome"),
    "time": ("time_index", "time"),
}
_SIMULATION_ONLY = ("true_pp", "true_theta")


def infer_column_spec(filename: str) -> ColumnSpec:
    """Column specification guessed from conventional column names.

    Remaining columns are covariates: partially observed when they hold any
    empty field, fully observed otherwise.

    Args:
        filename: Path of the CSV file.

    Returns:
        The `ColumnSpec`.

    Raises:
        SchemaError: If a required role has no matching column.

    """
    try:
        frame = pd.read_csv(filename, skiprows=_digest_rows(filename))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"cannot read {filename}: {exc}") from exc
    roles = {}
    for role, candidates in _ROLE_NAMES.items():
        found = next((c for c in candidates if c in frame.columns), None)
        if found is None and role != "time":
            raise SchemaError(
                f"{filename}: no {role} column "
                f"(expected one of {', '.join(candidates)})"
            )
        roles[role] = found
    taken = set(roles.values()) | set(_SIMULATION_ONLY)
    rest = [c for c in frame.columns if c not in taken]
    partial = [c for c in rest if frame[c].isna().any()]
    observed = [c for c in rest if c not in partial]
    return make_column_spec(observed=observed, partial=partial, **roles)

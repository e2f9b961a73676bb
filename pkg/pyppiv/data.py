"""Checks and filters on provider-clustered panels."""

import logging
from typing import List

import numpy as np

from pyppiv.exceptions import EmptyResultError, PyppivValueError
from pyppiv.models import CompleteCaseMode, PanelDataset, Violation


logger = logging.getLogger(__name__)


def validate(dataset: PanelDataset) -> List[Violation]:
    """List every broken invariant of a panel.

    Violations are reported, never raised.

    Args:
        dataset: The panel to check.

    Returns:
        A list of `Violation` objects; empty when the panel is well formed.

    """
    out: List[Violation] = []
    ids = dataset.provider_ids

    def _add(rule: str, row: int, message: str) -> None:
        out.append(
            Violation(
                rule=rule,
                provider_id=ids[dataset.provider[row]] if row >= 0 else None,
                order_index=int(dataset.order_index[row]) if row >= 0 else None,
                message=message,
            )
        )

    for row in np.flatnonzero((dataset.x != 0) & (dataset.x != 1)):
        _add("treatment", row, f"treatment must be 0 or 1, got {dataset.x[row]:g}")

    if dataset.r.shape[1]:
        present_but_flagged = dataset.r & ~np.isnan(dataset.w_miss)
        absent_not_flagged = ~dataset.r & np.isnan(dataset.w_miss)
        for row in np.flatnonzero(present_but_flagged.any(axis=1)):
            _add(
                "missing_flag", row, "covariate flagged missing but a value is present"
            )
        for row in np.flatnonzero(absent_not_flagged.any(axis=1)):
            _add("missing_flag", row, "covariate value absent but not flagged missing")
    for row in np.flatnonzero(np.isnan(dataset.w_obs).any(axis=1)):
        _add("observed_covariate", row, "a fully observed covariate is missing")

    if dataset.true_pp is not None:
        pp = dataset.true_pp
        for row in np.flatnonzero(~((pp >= 0) & (pp <= 1))):
            _add("true_pp", row, f"true_pp must lie in [0, 1], got {pp[row]:g}")

    sizes = dataset.provider_sizes()
    for code in np.flatnonzero(sizes == 0):
        out.append(
            Violation(
                rule="empty_provider",
                provider_id=ids[code],
                order_index=None,
                message="provider has no records",
            )
        )

    bounds = dataset.provider_bounds()
    for code in range(dataset.n_providers):
        lo, hi = bounds[code], bounds[code + 1]
        if hi == lo:
            continue
        order = dataset.order_index[lo:hi]
        seen = set()
        for k in range(lo, hi):
            value = int(dataset.order_index[k])
            if value in seen:
                _add("order_index", k, "duplicated order_index")
            seen.add(value)
        expected = np.arange(1, hi - lo + 1)
        uniq = np.unique(order)
        if uniq.size == order.size and not np.array_equal(uniq, expected):
            _add("order_index", lo, f"order_index must run 1..{hi - lo} without gaps")
        steps = np.diff(dataset.time_index[lo:hi])
        for k in np.flatnonzero(steps < 0):
            _add(
                "time_index",
                lo + k + 1,
                "time_index decreases along the treatment order",
            )
        if (dataset.time_index[lo:hi] < 1).any():
            _add("time_index", lo, "time_index must be a positive integer")

    return out


def complete_case(dataset: PanelDataset, on: CompleteCaseMode) -> PanelDataset:
    """Keep records with a present outcome, and covariates if requested.

    Args:
        dataset: The panel to filter.
        on: Either `CompleteCaseMode.OUTCOME_ONLY` or
            `CompleteCaseMode.OUTCOME_AND_COVARIATES`.

    Returns:
        The filtered panel; emptied providers are dropped and ``order_index``
        values are retained.

    Raises:
        EmptyResultError: If no record survives.

    """
    on = CompleteCaseMode(on)
    with_covariates = on is CompleteCaseMode.OUTCOME_AND_COVARIATES
    mask = dataset.complete_rows(on_covariates=with_covariates)
    if not mask.any():
        raise EmptyResultError(f"no complete records ({on.value})")
    if mask.all():
        return dataset
    out = dataset.take(mask)
    logger.debug(
        "complete case (%s) kept %d/%d records, %d/%d providers",
        on.value,
        out.n_records,
        dataset.n_records,
        out.n_providers,
        dataset.n_providers,
    )
    return out


def filter_min_provider_size(dataset: PanelDataset, n_min: int) -> PanelDataset:
    """Drop providers with fewer than ``n_min`` records.

    Args:
        dataset: The panel to filter.
        n_min: Smallest provider size retained.

    Returns:
        The filtered panel.

    Raises:
        PyppivValueError: If ``n_min`` is below 1.
        EmptyResultError: If every provider is dropped.

    """
    if n_min < 1:
        raise PyppivValueError(f"n_min must be at least 1, got {n_min}")
    sizes = dataset.provider_sizes()
    keep = sizes >= n_min
    dropped = int((~keep).sum())
    if not keep.any():
        raise EmptyResultError(f"no provider has at least {n_min} records")
    if dropped == 0:
        return dataset
    logger.info("dropped %d providers smaller than %d records", dropped, n_min)
    return dataset.take(keep[dataset.provider])


def dropped_providers(before: PanelDataset, after: PanelDataset) -> List[str]:
    """Provider identifiers present in one panel but not in a filtered one.

    Args:
        before: The unfiltered panel.
        after: The filtered panel.

    Returns:
        Identifiers in ``before`` order.

    """
    kept = set(after.provider_ids)
    return [p for p in before.provider_ids if p not in kept]

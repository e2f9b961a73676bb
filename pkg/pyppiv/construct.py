"""Instrument construction from observed prescribing behaviour.

Every constructor maps a `PanelDataset` to an `InstrumentSeries` whose values
are aligned with the dataset rows, NaN where the instrument cannot be
calculated. Rule-based windows use the position of a row inside its provider
block, so a filtered panel is treated as the provider's treatment history.
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from pyppiv.exceptions import ConstructionError, ConvergenceError, PyppivValueError
from pyppiv.glmm import fit_glmm_logistic
from pyppiv.models import (
    ChangeDecision,
    ChangeType,
    GlmmFit,
    InstrumentSeries,
    Level,
    LogisticFit,
    PanelDataset,
    parse_method,
    prev_window,
)
from pyppiv.numerics import fit_logistic


logger = logging.getLogger(__name__)

SCREEN_THRESHOLD = 0.2
"""Smallest absolute proportion difference that makes a change time a candidate."""
CHANGE_MARGIN = 4.0
"""Deviance improvement needed to accept a change model."""
MIN_CHANGE_PATIENTS = 5
KREFT_MIN = 30
"""Providers and patients per provider below which mixed models are fragile."""


def _prefix_sums(x: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(x)])


def z_prev_b(dataset: PanelDataset, b: int) -> InstrumentSeries:
    """Share of treatment B among the previous ``b`` patients of the provider.

    Args:
        dataset: The panel.
        b: Window length.

    Returns:
        A per-patient `InstrumentSeries`, absent on the first ``b`` patients.

    Raises:
        PyppivValueError: If ``b`` is below 1.

    """
    if b < 1:
        raise PyppivValueError(f"window must be at least 1, got {b}")
    csum = _prefix_sums(dataset.x)
    pos = dataset.positions()
    rows = np.arange(dataset.n_records)
    values = np.full(dataset.n_records, np.nan)
    ok = pos >= b
    values[ok] = (csum[rows[ok]] - csum[rows[ok] - b]) / b
    method = "prevpatient" if b == 1 else f"prev{b}patient"
    return InstrumentSeries(
        method=method,
        values=values,
        level=Level.PATIENT,
        binary=b == 1,
        notes=[],
        diagnostics={},
    )


def z_all_prev_prop(dataset: PanelDataset) -> InstrumentSeries:
    """Share of treatment B among all previous patients of the provider.

    Args:
        dataset: The panel.

    Returns:
        A per-patient `InstrumentSeries`, absent on each provider's first patient.

    """
    return InstrumentSeries(
        method="allprevprop",
        values=_running_share(dataset.x, dataset.provider_bounds()[dataset.provider]),
        level=Level.PATIENT,
        binary=False,
        notes=[],
        diagnostics={},
    )


def _running_share(x: np.ndarray, starts: np.ndarray) -> np.ndarray:
    csum = _prefix_sums(x)
    rows = np.arange(x.size)
    seen = rows - starts
    values = np.full(x.size, np.nan)
    ok = seen >= 1
    values[ok] = (csum[rows[ok]] - csum[starts[ok]]) / seen[ok]
    return values


def _provider_shares(dataset: PanelDataset) -> np.ndarray:
    sums = np.bincount(
        dataset.provider, weights=dataset.x, minlength=dataset.n_providers
    )
    return sums / dataset.provider_sizes()


def z_all_prop(dataset: PanelDataset) -> InstrumentSeries:
    """Provider share of treatment B, repeated for every patient.

    Args:
        dataset: The panel.

    Returns:
        A per-provider `InstrumentSeries`.

    """
    return InstrumentSeries(
        method="allprop",
        values=_provider_shares(dataset)[dataset.provider],
        level=Level.PROVIDER,
        binary=False,
        notes=[],
        diagnostics={},
    )


def dichotomize(values: np.ndarray, center: str) -> Tuple[np.ndarray, float, bool]:
    """Split values at their mean or median; values at or below the center map to 0.

    Args:
        values: Values to split.
        center: ``"mean"`` or ``"median"``.

    Returns:
        The 0/1 values, the center, and whether all values were equal.

    Raises:
        PyppivValueError: If the center is unknown.

    """
    if center not in ("mean", "median"):
        raise PyppivValueError(f"center must be 'mean' or 'median', got '{center}'")
    if np.ptp(values) == 0:
        return np.zeros(values.size), float(values[0]), True
    cut = float(np.mean(values) if center == "mean" else np.median(values))
    return (values > cut).astype(float), cut, False


def z_all_dich(dataset: PanelDataset, center: str = "median") -> InstrumentSeries:
    """Provider share of treatment B dichotomized at the mean or median share.

    Args:
        dataset: The panel.
        center: ``"mean"`` or ``"median"``.

    Returns:
        A binary per-provider `InstrumentSeries`.

    Raises:
        ConstructionError: If there are fewer than two providers.

    """
    method = f"alldich{center}"
    if dataset.n_providers < 2:
        raise ConstructionError(method, "needs at least two providers")
    z, cut, degenerate = dichotomize(_provider_shares(dataset), center)
    notes = []
    if degenerate:
        notes.append("all provider shares are equal; every instrument value is 0")
        logger.warning("%s: %s", method, notes[-1])
    return InstrumentSeries(
        method=method,
        values=z[dataset.provider],
        level=Level.PROVIDER,
        binary=True,
        notes=notes,
        diagnostics={"center": cut},
    )


def _kreft_note(n_providers: int, sizes: np.ndarray) -> Optional[str]:
    if n_providers < KREFT_MIN or float(np.mean(sizes)) < KREFT_MIN:
        return (
            f"mixed model fit on {n_providers} providers with mean size "
            f"{np.mean(sizes):.1f}; at least {KREFT_MIN} of each is advisable"
        )
    return None


def _fit_subset(dataset: PanelDataset, method: str) -> PanelDataset:
    mask = dataset.complete_rows(on_covariates=True)
    if not mask.any():
        raise ConstructionError(
            method, "no covariate complete records to fit the mixed model"
        )
    fit_data = dataset.take(mask)
    if fit_data.n_providers < 2:
        raise ConstructionError(method, "mixed model needs at least two providers")
    return fit_data


def _glmm_notes(
    method: str, fit_data: PanelDataset, fit_notes: Tuple[str, ...]
) -> List[str]:
    notes = list(fit_notes)
    kreft = _kreft_note(fit_data.n_providers, fit_data.provider_sizes())
    if kreft:
        logger.warning("%s: %s", method, kreft)
        notes.append(kreft)
    return notes


def _fit_glmm(
    method: str,
    fit_data: PanelDataset,
    design: np.ndarray,
    random_spec: str,
    time: Optional[np.ndarray] = None,
) -> GlmmFit:
    try:
        return fit_glmm_logistic(
            design, fit_data.provider, fit_data.x, random_spec, time
        )
    except ConvergenceError as exc:
        raise ConstructionError(method, str(exc)) from exc


def construct_epp(dataset: PanelDataset) -> InstrumentSeries:
    """Binary provider preference from random intercepts of a treatment model.

    A random intercept logistic model of treatment on all covariates is fit to
    the covariate complete records. A provider gets 1 when its predicted
    intercept lies above the median intercept. Providers without a complete
    record get no instrument.

    Args:
        dataset: The analysis panel (outcome complete).

    Returns:
        A binary per-provider `InstrumentSeries`.

    """
    method = "epp"
    fit_data = _fit_subset(dataset, method)
    cov, _ = fit_data.covariates("all")
    design = np.column_stack([np.ones(fit_data.n_records), cov])
    fit = _fit_glmm(method, fit_data, design, random_spec="intercept")
    intercepts = fit.ranef[:, 0]
    z_fit, cut, _ = dichotomize(intercepts, "median")

    by_id: Dict[str, float] = {
        fit_data.provider_ids[int(code)]: z for code, z in zip(fit.cluster_ids, z_fit)
    }
    per_provider = np.array([by_id.get(pid, np.nan) for pid in dataset.provider_ids])
    return InstrumentSeries(
        method=method,
        values=per_provider[dataset.provider],
        level=Level.PROVIDER,
        binary=True,
        notes=_glmm_notes(method, fit_data, fit.notes),
        diagnostics={"fit": fit, "center": cut},
    )


def construct_epp_rirs(dataset: PanelDataset) -> InstrumentSeries:
    """Binary time-varying preference from a random intercept and slope model.

    A logistic model of treatment on time and all covariates, with provider
    random intercepts and time slopes, is fit to the covariate complete
    records. For every analysis record the fitted preference predictor
    ``g0 + g0j + (gT + gTj) T`` is compared to its median over all patients.

    Args:
        dataset: The analysis panel (outcome complete).

    Returns:
        A binary per-patient `InstrumentSeries`.

    """
    method = "epp_rirs"
    fit_data = _fit_subset(dataset, method)
    cov, _ = fit_data.covariates("all")
    time = fit_data.time_index.astype(float)
    design = np.column_stack([np.ones(fit_data.n_records), time, cov])
    fit = _fit_glmm(
        method, fit_data, design, random_spec="intercept_and_slope", time=time
    )

    ranef = np.full((dataset.n_providers, 2), np.nan)
    index = {pid: k for k, pid in enumerate(dataset.provider_ids)}
    for code, effects in zip(fit.cluster_ids, fit.ranef):
        ranef[index[fit_data.provider_ids[int(code)]]] = effects
    g0, gt = fit.fixed_coef[0], fit.fixed_coef[1]
    rows = ranef[dataset.provider]
    theta = g0 + rows[:, 0] + (gt + rows[:, 1]) * dataset.time_index
    present = ~np.isnan(theta)
    values = np.full(dataset.n_records, np.nan)
    z, cut, _ = dichotomize(theta[present], "median")
    values[present] = z
    return InstrumentSeries(
        method=method,
        values=values,
        level=Level.PATIENT,
        binary=True,
        notes=_glmm_notes(method, fit_data, fit.notes),
        diagnostics={"fit": fit, "center": cut, "theta": theta},
    )


def _logistic_or_last(
    design: np.ndarray, x: np.ndarray, start: Optional[np.ndarray]
) -> LogisticFit:
    try:
        return fit_logistic(design, x, start=start, quiet=True)
    except ConvergenceError as exc:
        return exc.fit  # type: ignore


def abrahamowicz_detect(
    x: np.ndarray,
    covariates: Optional[np.ndarray] = None,
    threshold: float = SCREEN_THRESHOLD,
    margin: float = CHANGE_MARGIN,
) -> ChangeDecision:
    """Decide whether one provider changed preference once.

    The no-change model regresses treatment on the covariates. Candidate change
    times ``i`` in ``3..n-3`` whose before/after difference in treatment B
    share is at least ``threshold`` get a change model with the indicator of
    being treated after ``i``. The change with the smallest deviance is
    accepted when it improves the no-change deviance by at least ``margin``.

    Args:
        x: Treatments of the provider in treatment order.
        covariates: n×K covariates of the same patients.
        threshold: Screening threshold on the share difference.
        margin: Deviance improvement required.

    Returns:
        A `ChangeDecision`; ``i_star`` is a 1-based rank within ``x``.

    Raises:
        ConstructionError: If fewer than five patients are given.

    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < MIN_CHANGE_PATIENTS:
        raise ConstructionError(
            "star", f"change detection needs {MIN_CHANGE_PATIENTS} patients, got {n}"
        )
    if covariates is None:
        cov = np.zeros((n, 0))
    else:
        cov = np.asarray(covariates, dtype=float).reshape(n, -1)
    design0 = np.column_stack([np.ones(n), cov])
    fit0 = _logistic_or_last(design0, x, None)
    separated = bool(fit0.separated)

    csum = np.cumsum(x)
    ranks = np.arange(3, n - 2)
    if ranks.size:
        before = csum[ranks - 1] / ranks
        after = (csum[-1] - csum[ranks - 1]) / (n - ranks)
        diff = before - after
        screen = float(np.max(np.abs(diff)))
        candidates = ranks[np.abs(diff) >= threshold]
    else:
        screen = 0.0
        candidates = ranks

    if candidates.size == 0:
        return ChangeDecision(
            changed=False,
            i_star=None,
            deviance_no_change=fit0.deviance,
            deviance_best_change=np.nan,
            screen_max_abs_d=screen,
            change_type=None,
            separated=separated,
        )

    start = np.append(fit0.coef, 0.0)
    later = np.arange(1, n + 1)
    deviances = np.empty(candidates.size)
    for k, i in enumerate(candidates):
        fit = _logistic_or_last(np.column_stack([design0, later > i]), x, start)
        separated = separated or bool(fit.separated)
        deviances[k] = fit.deviance
    best = int(np.argmin(deviances))
    i_star = int(candidates[best])
    changed = bool(fit0.deviance >= deviances[best] + margin)
    change_type = None
    if changed:
        first = csum[i_star - 1] / i_star
        second = (csum[-1] - csum[i_star - 1]) / (n - i_star)
        change_type = ChangeType.A_TO_B if second > first else ChangeType.B_TO_A
    return ChangeDecision(
        changed=changed,
        i_star=i_star if changed else None,
        deviance_no_change=fit0.deviance,
        deviance_best_change=float(deviances[best]),
        screen_max_abs_d=screen,
        change_type=change_type,
        separated=separated,
    )


def construct_star(dataset: PanelDataset) -> InstrumentSeries:
    """Running share of treatment B, restarted after a detected preference change.

    Args:
        dataset: A covariate complete panel with at least five patients per provider.

    Returns:
        A per-patient `InstrumentSeries`, absent on each provider's first patient
        and on the first patient after a detected change.

    """
    method = "star"
    cov, _ = dataset.covariates("all")
    bounds = dataset.provider_bounds()
    starts = bounds[dataset.provider].copy()
    decisions: List[ChangeDecision] = []
    for code, pid in enumerate(dataset.provider_ids):
        lo, hi = int(bounds[code]), int(bounds[code + 1])
        decision = abrahamowicz_detect(dataset.x[lo:hi], cov[lo:hi])
        decisions.append(decision.replace(provider_id=pid))  # type: ignore
        if decision.changed:
            starts[lo + decision.i_star : hi] = lo + decision.i_star

    notes = []
    n_separated = sum(d.separated for d in decisions)
    if n_separated:
        notes.append(
            f"{n_separated} of {len(decisions)} providers had a separated logistic fit"
        )
        logger.info("%s: %s", method, notes[-1])
    n_changed = sum(d.changed for d in decisions)
    logger.debug(
        "%s: change detected in %d of %d providers", method, n_changed, len(decisions)
    )
    return InstrumentSeries(
        method=method,
        values=_running_share(dataset.x, starts),
        level=Level.PATIENT,
        binary=False,
        notes=notes,
        diagnostics={"decisions": decisions},
    )


_FIXED: Dict[str, Callable[[PanelDataset], InstrumentSeries]] = {
    "allprevprop": z_all_prev_prop,
    "allprop": z_all_prop,
    "alldichmean": lambda d: z_all_dich(d, "mean"),
    "alldichmedian": lambda d: z_all_dich(d, "median"),
    "epp": construct_epp,
    "epp_rirs": construct_epp_rirs,
    "star": construct_star,
}


def construct(dataset: PanelDataset, method: str) -> InstrumentSeries:
    """Build the instrument of any construction method.

    Args:
        dataset: The prepared panel.
        method: A method name accepted by `parse_method`.

    Returns:
        The `InstrumentSeries`.

    Raises:
        ConstructionError: If the method is not a construction method.

    """
    name = parse_method(method)
    b = prev_window(name)
    if b is not None:
        return z_prev_b(dataset, b)
    if name not in _FIXED:
        raise ConstructionError(name, "not an instrument construction method")
    return _FIXED[name](dataset)

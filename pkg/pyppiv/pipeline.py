"""Two-stage least squares estimation for every instrument method."""

import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from pyppiv.construct import construct
from pyppiv.data import complete_case, dropped_providers, filter_min_provider_size
from pyppiv.exceptions import (
    EmptyResultError,
    MissingTruePreference,
    PyppivException,
    PyppivValueError,
)
from pyppiv.models import (
    WEAK_F,
    BaseModel,
    CompleteCaseMode,
    CovariateSet,
    EstimateResult,
    LedgerRow,
    MethodRequirements,
    OlsFit,
    PanelDataset,
    parse_method,
    prev_window,
)
from pyppiv.numerics import expit, fit_ols, partial_f


logger = logging.getLogger(__name__)

Z_CRIT = 1.96
SE_KINDS = ("naive", "corrected")

_CC_ALL = CompleteCaseMode.OUTCOME_AND_COVARIATES
_CC_Y = CompleteCaseMode.OUTCOME_ONLY

_REQUIREMENTS: Dict[str, Tuple[int, CompleteCaseMode, CovariateSet]] = {
    "allprevprop": (2, _CC_ALL, CovariateSet.ALL),
    "allprop": (2, _CC_ALL, CovariateSet.ALL),
    "alldichmean": (2, _CC_ALL, CovariateSet.ALL),
    "alldichmedian": (2, _CC_ALL, CovariateSet.ALL),
    "epp": (2, _CC_Y, CovariateSet.OBS_ONLY),
    "epp_rirs": (2, _CC_Y, CovariateSet.OBS_ONLY),
    "star": (5, _CC_ALL, CovariateSet.ALL),
    "observational": (1, _CC_ALL, CovariateSet.ALL),
    "pp": (1, _CC_Y, CovariateSet.OBS_ONLY),
    "pp_cc": (1, _CC_ALL, CovariateSet.ALL),
}


def requirements(method: str) -> MethodRequirements:
    """Data preparation rules of a method.

    ``prev{b}patient`` needs ``b + 1`` patients per provider; the other
    methods follow a fixed table.

    Args:
        method: A method name accepted by `parse_method`.

    Returns:
        The `MethodRequirements`.

    """
    name = parse_method(method)
    b = prev_window(name)
    if b is not None:
        n_min, mode, covs = b + 1, _CC_ALL, CovariateSet.ALL
    else:
        n_min, mode, covs = _REQUIREMENTS[name]
    return MethodRequirements(
        method=name, n_j_min=n_min, cc_mode=mode, outcome_covariates=covs
    )


def requirements_table(methods: Sequence[str]) -> List[Dict[str, Any]]:
    """Applied requirements as plain rows for manifests.

    Args:
        methods: Method names.

    Returns:
        One mapping per method.

    """
    rows = []
    for method in methods:
        req = requirements(method)
        rows.append(
            {
                "method": req.method,
                "n_j_min": req.n_j_min,
                "cc_mode": req.cc_mode.value,
                "outcome_covariates": req.outcome_covariates.value,
            }
        )
    return rows


def _covariates(
    dataset: PanelDataset, which: CovariateSet
) -> Tuple[np.ndarray, Tuple[str, ...]]:
    return dataset.covariates("all" if which is CovariateSet.ALL else "obs")


def _treated_share(x: np.ndarray) -> float:
    return float(np.mean(x)) if x.size else float("nan")


def two_stage(
    y: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    covariates: np.ndarray,
    names: Sequence[str] = (),
    se_kind: str = "naive",
) -> Tuple[float, float, float, OlsFit, OlsFit]:
    """Two-stage least squares with a single instrument.

    The first stage regresses treatment on ``[1, Z, W]``; the second stage
    regresses the outcome on ``[1, X_hat, W]``. Naive standard errors come
    from the second stage. Corrected ones rescale them with residuals computed
    from the actual treatment.

    Args:
        y: Outcome.
        x: Treatment.
        z: Instrument.
        covariates: N×K covariates.
        names: Covariate names.
        se_kind: ``"naive"`` or ``"corrected"``.

    Returns:
        Effect estimate, its standard error, the partial F of the instrument,
        and the first and second stage fits.

    Raises:
        PyppivValueError: If ``se_kind`` is unknown.

    """
    if se_kind not in SE_KINDS:
        raise PyppivValueError(f"se must be one of {SE_KINDS}, got '{se_kind}'")
    n = y.size
    ones = np.ones((n, 1))
    names = list(names)
    first = fit_ols(
        np.column_stack([ones, z, covariates]), x, ["const", "instrument", *names]
    )
    restricted = fit_ols(np.column_stack([ones, covariates]), x, ["const", *names])
    f_stat = partial_f(first, restricted, 1)

    second_design = np.column_stack([ones, first.fitted, covariates])
    second = fit_ols(second_design, y, ["const", "treatment_hat", *names])
    beta = float(second.coef[1])
    if se_kind == "naive":
        se = float(np.sqrt(second.coef_cov[1, 1]))
    else:
        actual = np.column_stack([ones, x, covariates])
        resid = y - actual @ second.coef
        sigma2 = float(resid @ resid) / second.df_resid
        se = float(np.sqrt(sigma2 * second.xtx_inv[1, 1]))
    return beta, se, f_stat, first, second


def _result(
    method: str,
    beta: float,
    se: float,
    f_stat: float,
    dataset: PanelDataset,
    se_kind: str,
    instrumented: bool,
    notes: Sequence[str],
    diagnostics: Any = None,
) -> EstimateResult:
    weak = bool(instrumented and f_stat < WEAK_F)
    notes = list(notes)
    if weak:
        notes.append(f"weak instrument (F = {f_stat:.2f} < {WEAK_F:g})")
        logger.warning("%s: %s", method, notes[-1])
    return EstimateResult(
        method=method,
        beta_hat=beta,
        se=se,
        ci_low=beta - Z_CRIT * se,
        ci_high=beta + Z_CRIT * se,
        f_statistic=f_stat,
        n_used=dataset.n_records,
        j_used=dataset.n_providers,
        weak=weak,
        se_kind=se_kind,
        treated_share=_treated_share(dataset.x),
        notes=notes,
        diagnostics=diagnostics,
    )


def true_preference(dataset: PanelDataset) -> np.ndarray:
    """Simulated preference used by the benchmark estimators.

    Generator B datasets use ``expit`` of the true preference predictor.

    Args:
        dataset: A simulated panel.

    Returns:
        The preference per row.

    Raises:
        MissingTruePreference: If the panel carries no simulated preference.

    """
    if dataset.generator != "B" and dataset.true_pp is not None:
        return np.asarray(dataset.true_pp)
    if dataset.true_theta is not None:
        return expit(np.asarray(dataset.true_theta))
    if dataset.true_pp is not None:
        return np.asarray(dataset.true_pp)
    raise MissingTruePreference("dataset carries neither true_pp nor true_theta")


class _Ledger:
    def __init__(self, req: MethodRequirements, dataset: PanelDataset) -> None:
        self.req = req
        self.dataset = dataset
        self.used: Optional[PanelDataset] = None
        self.counts: Dict[str, Any] = {
            "n_records_in": dataset.n_records,
            "n_providers_in": dataset.n_providers,
            "n_dropped_complete_case": 0,
            "n_dropped_provider_size": 0,
            "n_dropped_instrument": 0,
            "n_used": 0,
            "j_used": 0,
            "treated_share": float("nan"),
        }

    def row(self, status: str) -> LedgerRow:
        counts = dict(self.counts)
        if status == "ok" and self.used is not None:
            dropped = dropped_providers(self.dataset, self.used)
        else:
            dropped = list(self.dataset.provider_ids)
        return LedgerRow(
            method=self.req.method,
            n_j_min=self.req.n_j_min,
            cc_mode=self.req.cc_mode.value,
            outcome_covariates=self.req.outcome_covariates.value,
            providers_dropped=len(dropped),
            dropped_provider_ids=dropped,
            status=status,
            **counts,
        )


def _prepare(
    dataset: PanelDataset, req: MethodRequirements, ledger: _Ledger
) -> PanelDataset:
    cc = complete_case(dataset, req.cc_mode)
    ledger.counts["n_dropped_complete_case"] = dataset.n_records - cc.n_records
    sized = filter_min_provider_size(cc, req.n_j_min)
    ledger.counts["n_dropped_provider_size"] = cc.n_records - sized.n_records
    return sized


def _enough(method: str, analysis: PanelDataset, width: int) -> PanelDataset:
    if analysis.n_records <= width:
        raise EmptyResultError(
            f"{method}: {analysis.n_records} records left for {width} coefficients"
        )
    return analysis


def run_method_with_ledger(
    dataset: PanelDataset, method: str, se_kind: str = "naive"
) -> Tuple[EstimateResult, LedgerRow]:
    """Run one method and report its data preparation.

    Args:
        dataset: The panel.
        method: Any construction method, ``observational``, ``pp`` or ``pp_cc``.
        se_kind: ``"naive"`` or ``"corrected"``.

    Returns:
        The estimate and its `LedgerRow`.

    Raises:
        EmptyResultError: If preparation leaves no data; ``ledger`` is attached
            to the exception.

    """
    name = parse_method(method)
    req = requirements(name)
    ledger = _Ledger(req, dataset)
    try:
        prepared = _prepare(dataset, req, ledger)
        covs, names = _covariates(prepared, req.outcome_covariates)
        if name == "observational":
            analysis = _enough(name, prepared, 2 + covs.shape[1])
            design = np.column_stack([np.ones(analysis.n_records), analysis.x, covs])
            fit = fit_ols(design, analysis.y, ["const", "treatment", *names])
            beta, se = float(fit.coef[1]), float(np.sqrt(fit.coef_cov[1, 1]))
            result = _result(name, beta, se, 0.0, analysis, se_kind, False, [])
        else:
            if name in ("pp", "pp_cc"):
                z_all = true_preference(prepared)
                notes: List[str] = []
                diagnostics: Any = None
            else:
                instrument = construct(prepared, name)
                z_all = np.asarray(instrument.values)
                notes = list(instrument.notes)
                diagnostics = instrument.diagnostics
            present = ~np.isnan(z_all)
            ledger.counts["n_dropped_instrument"] = int((~present).sum())
            if not present.any():
                raise EmptyResultError(
                    f"{name}: instrument not calculable for any record"
                )
            analysis = _enough(name, prepared.take(present), 2 + covs.shape[1])
            covs, names = _covariates(analysis, req.outcome_covariates)
            beta, se, f_stat, _, _ = two_stage(
                analysis.y, analysis.x, z_all[present], covs, names, se_kind
            )
            result = _result(
                name, beta, se, f_stat, analysis, se_kind, True, notes, diagnostics
            )
    except EmptyResultError as exc:
        exc.ledger = ledger.row("no_data")
        raise
    ledger.used = analysis
    ledger.counts.update(
        n_used=result.n_used, j_used=result.j_used, treated_share=result.treated_share
    )
    return result, ledger.row("ok")


def run_method(
    dataset: PanelDataset, method: str, se_kind: str = "naive"
) -> EstimateResult:
    """Prepare the data, build the instrument and estimate the treatment effect.

    Args:
        dataset: The panel.
        method: A construction method name.
        se_kind: ``"naive"`` or ``"corrected"``.

    Returns:
        The `EstimateResult`.

    """
    return run_method_with_ledger(dataset, method, se_kind)[0]


def run_observational(dataset: PanelDataset) -> EstimateResult:
    """As-treated estimate: outcome on treatment and all covariates.

    Args:
        dataset: The panel; covariate incomplete records are dropped.

    Returns:
        The `EstimateResult` with ``f_statistic`` 0.

    """
    return run_method_with_ledger(dataset, "observational")[0]


def run_pp_benchmarks(
    dataset: PanelDataset, se_kind: str = "naive"
) -> Tuple[EstimateResult, EstimateResult]:
    """Estimates instrumented by the simulated preference.

    Args:
        dataset: A simulated panel.
        se_kind: ``"naive"`` or ``"corrected"``.

    Returns:
        IV(PP) on outcome complete data and IV(PP) cc on covariate complete data.

    """
    true_preference(dataset)
    return (
        run_method_with_ledger(dataset, "pp", se_kind)[0],
        run_method_with_ledger(dataset, "pp_cc", se_kind)[0],
    )


class AnalysisOutcome(BaseModel):
    """Result of one method inside `run_analysis`.

    Attributes:
        method: Canonical method name.
        ledger: Data preparation bookkeeping.
        result: The estimate, None on failure.
        error: Failure message, None on success.
        no_data: Whether the failure was an empty analysis set.
    """

    @property
    def ok(self) -> bool:
        """Whether the method produced an estimate."""
        return self.result is not None


def common_sample(dataset: PanelDataset, methods: Sequence[str]) -> PanelDataset:
    """One dataset satisfying the requirements of every listed method.

    Args:
        dataset: The panel.
        methods: Method names.

    Returns:
        Covariate complete records of providers at least as large as the
        largest requirement.

    """
    n_min = max(requirements(m).n_j_min for m in methods)
    return filter_min_provider_size(complete_case(dataset, _CC_ALL), n_min)


def run_analysis(
    dataset: PanelDataset,
    methods: Sequence[str],
    se_kind: str = "naive",
    use_common_sample: bool = False,
) -> List[AnalysisOutcome]:
    """Apply several methods to one panel, continuing past failures.

    Args:
        dataset: The panel.
        methods: Method names, benchmarks included.
        se_kind: ``"naive"`` or ``"corrected"``.
        use_common_sample: Run every method on `common_sample` of the panel.

    Returns:
        One `AnalysisOutcome` per method in the given order.

    """
    names = [parse_method(m) for m in methods]
    if use_common_sample:
        dataset = common_sample(dataset, names)
        logger.info(
            "common sample: %d records, %d providers",
            dataset.n_records,
            dataset.n_providers,
        )
    outcomes = []
    for name in names:
        try:
            result, ledger = run_method_with_ledger(dataset, name, se_kind)
            outcomes.append(
                AnalysisOutcome(
                    method=name, ledger=ledger, result=result, error=None, no_data=False
                )
            )
        except EmptyResultError as exc:
            logger.warning("%s: no data (%s)", name, exc)
            ledger = exc.ledger or _Ledger(requirements(name), dataset).row("no_data")
            outcomes.append(
                AnalysisOutcome(
                    method=name,
                    ledger=ledger,
                    result=None,
                    error=str(exc),
                    no_data=True,
                )
            )
        except PyppivException as exc:
            logger.error("%s failed: %s", name, exc)
            ledger = _Ledger(requirements(name), dataset).row("error")
            outcomes.append(
                AnalysisOutcome(
                    method=name,
                    ledger=ledger,
                    result=None,
                    error=str(exc),
                    no_data=False,
                )
            )
    return outcomes

"""Instrument construction methods and their outputs."""

import re
from enum import Enum
from typing import Optional

import numpy as np

from pyppiv.exceptions import PyppivValueError

from .base import BaseModel


class CompleteCaseMode(str, Enum):
    """Which fields must be present for a record to be kept."""

    OUTCOME_ONLY = "outcome_only"
    OUTCOME_AND_COVARIATES = "outcome_and_covariates"


class CovariateSet(str, Enum):
    """Which covariates enter the outcome and treatment regressions."""

    ALL = "all"
    OBS_ONLY = "obs_only"


class Level(str, Enum):
    """Whether an instrument varies by patient or only by provider."""

    PATIENT = "per-patient"
    PROVIDER = "per-provider"


class MethodId(str, Enum):
    """The named construction methods and the benchmark estimators."""

    PREVPATIENT = "prevpatient"
    PREV2PATIENT = "prev2patient"
    PREV5PATIENT = "prev5patient"
    PREV10PATIENT = "prev10patient"
    ALLPREVPROP = "allprevprop"
    ALLPROP = "allprop"
    ALLDICHMEAN = "alldichmean"
    ALLDICHMEDIAN = "alldichmedian"
    EPP = "epp"
    EPP_RIRS = "epp_rirs"
    STAR = "star"
    OBSERVATIONAL = "observational"
    PP = "pp"
    PP_CC = "pp_cc"


CONSTRUCTION_METHODS = tuple(m.value for m in MethodId)[:11]
BENCHMARKS = (MethodId.OBSERVATIONAL.value, MethodId.PP.value, MethodId.PP_CC.value)

_PREV_RE = re.compile(r"^prev(\d*)patient$|^prev_b\((\d+)\)$|^prev(\d+)$")


def parse_method(name: str) -> str:
    """Normalize a method name.

    ``prev_b(b)``, ``prev{b}`` and ``prev{b}patient`` all map to
    ``prev{b}patient`` with ``b = 1`` spelled ``prevpatient``.

    Args:
        name: The user supplied method name.

    Returns:
        The canonical method name.

    Raises:
        PyppivValueError: If the name is unknown or the window is below 1.

    """
    text = name.strip().lower()
    match = _PREV_RE.match(text)
    if match:
        digits = next((g for g in match.groups() if g is not None), "")
        b = int(digits) if digits else 1
        if b < 1:
            raise PyppivValueError(f"prev_b window must be at least 1, got {b}")
        return "prevpatient" if b == 1 else f"prev{b}patient"
    try:
        return MethodId(text).value
    except ValueError:
        known = ", ".join(m.value for m in MethodId)
        raise PyppivValueError(
            f"unknown method '{name}' (known: {known}, prev_b(b))"
        ) from None


def prev_window(method: str) -> Optional[int]:
    """Window length of a previous-patients method.

    Args:
        method: A canonical method name.

    Returns:
        ``b`` for ``prev{b}patient`` methods, else None.

    """
    match = re.match(r"^prev(\d*)patient$", method)
    if not match:
        return None
    return int(match.group(1)) if match.group(1) else 1


def method_label(method: str) -> str:
    """Label used in result tables, e.g. ``IV allprop`` or ``IV(PP) cc``.

    Args:
        method: A canonical method name.

    Returns:
        The display label.

    """
    special = {
        "observational": "obs. estimate",
        "pp": "IV(PP)",
        "pp_cc": "IV(PP) cc",
        "epp": "IV ePP",
        "epp_rirs": "IV ePP(rirs)",
    }
    return special.get(method, f"IV {method}")


class InstrumentSeries(BaseModel):
    """A constructed instrument aligned with the rows of a panel.

    Attributes:
        method: Canonical method name.
        values: One value per row of the panel it was built from; NaN where the
            instrument cannot be calculated.
        level: `Level` of the instrument.
        binary: Whether present values are restricted to 0 and 1.
        notes: Warnings raised while constructing.
        diagnostics: Method specific extras (fits, change decisions).
    """

    @property
    def present(self) -> np.ndarray:
        """Boolean mask of rows with a calculable instrument."""
        return ~np.isnan(self.values)

    @property
    def n_present(self) -> int:
        """Number of rows with a calculable instrument."""
        return int(self.present.sum())


class ChangeType(str, Enum):
    """Direction of a detected preference change."""

    A_TO_B = "A->B"
    B_TO_A = "B->A"


class ChangeDecision(BaseModel):
    """Outcome of the change-point screen for one provider.

    Attributes:
        changed: Whether a preference change was accepted.
        i_star: Last rank of the first segment when changed, else None.
        deviance_no_change: Deviance of the no-change model.
        deviance_best_change: Smallest change-time deviance (NaN if none fit).
        screen_max_abs_d: Largest absolute proportion difference screened.
        change_type: `ChangeType` when changed, else None.
        separated: Whether any logistic fit separated.
    """

    pass


class MethodRequirements(BaseModel):
    """Data preparation rules for one method.

    Attributes:
        method: Canonical method name.
        n_j_min: Smallest provider size retained.
        cc_mode: `CompleteCaseMode` applied before construction.
        outcome_covariates: `CovariateSet` used in both regressions.
    """

    pass

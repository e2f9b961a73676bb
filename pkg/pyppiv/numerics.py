"""Least squares and logistic regression engines."""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special

from pyppiv.exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    NestingError,
    PyppivValueError,
    RankDeficiencyError,
)
from pyppiv.models import LogisticFit, OlsFit


logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
"""Relative size of a QR pivot below which a column counts as redundant."""
SEPARATION_BOUND = 15.0
"""Largest absolute logistic coefficient before the fit is flagged separated."""


def expit(x: np.ndarray) -> np.ndarray:
    """Logistic function.

    Args:
        x: Real values.

    Returns:
        ``1 / (1 + exp(-x))``.

    """
    return special.expit(x)


def logit(p: np.ndarray) -> np.ndarray:
    """Log odds.

    Args:
        p: Probabilities.

    Returns:
        ``log(p / (1 - p))``.

    """
    return special.logit(p)


def _check_design(design: np.ndarray, y: np.ndarray) -> None:
    if design.ndim != 2:
        raise DimensionMismatchError(
            f"design must be a matrix, got {design.ndim} dimensions"
        )
    if y.ndim != 1 or y.shape[0] != design.shape[0]:
        raise DimensionMismatchError(
            f"response has shape {y.shape}, design has {design.shape[0]} rows"
        )
    n, k = design.shape
    if n <= k:
        raise DimensionMismatchError(
            f"need more rows than columns, got {n} rows for {k} columns"
        )
    if not (np.isfinite(design).all() and np.isfinite(y).all()):
        raise PyppivValueError("design and response must be finite")


def _column_name(columns: Optional[Sequence[str]], j: int) -> str:
    if columns is not None and j < len(columns):
        return str(columns[j])
    return f"column {j}"


def fit_ols(
    design: np.ndarray, y: np.ndarray, columns: Optional[Sequence[str]] = None
) -> OlsFit:
    """Fit ordinary least squares through a QR decomposition.

    Args:
        design: N×k design matrix, intercept included by the caller.
        y: Response of length N.
        columns: Optional column names used in error messages.

    Returns:
        An `OlsFit`.

    Raises:
        RankDeficiencyError: If a column is a linear combination of earlier ones.

    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_design(design, y)
    n, k = design.shape

    q, r = linalg.qr(design, mode="economic")
    diag = np.abs(np.diag(r))
    norms = np.linalg.norm(design, axis=0)
    for j in range(k):
        if norms[j] == 0.0 or diag[j] <= RANK_TOL * norms[j]:
            raise RankDeficiencyError(_column_name(columns, j))

    coef = linalg.solve_triangular(r, q.T @ y)
    fitted = design @ coef
    resid = y - fitted
    rss = float(resid @ resid)
    df_resid = n - k
    sigma2 = rss / df_resid
    r_inv = linalg.solve_triangular(r, np.eye(k))
    xtx_inv = r_inv @ r_inv.T
    return OlsFit(
        coef=coef,
        coef_cov=sigma2 * xtx_inv,
        rss=rss,
        df_resid=df_resid,
        sigma2=sigma2,
        fitted=fitted,
        xtx_inv=xtx_inv,
        columns=None if columns is None else list(columns),
    )


def _bernoulli_loglik(y: np.ndarray, eta: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    design: np.ndarray,
    y: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-8,
    separation_bound: float = SEPARATION_BOUND,
    start: Optional[np.ndarray] = None,
    quiet: bool = False,
) -> LogisticFit:
    """Fit a logistic regression by Newton iterations with step halving.

    The fit converges when the largest absolute score entry is at most ``tol``.
    When a coefficient exceeds ``separation_bound`` the iterations stop and the
    fit is returned flagged as separated.

    Args:
        design: N×k design matrix.
        y: Binary response.
        max_iter: Newton iterations allowed.
        tol: Score tolerance.
        separation_bound: Largest absolute coefficient tolerated.
        start: Starting coefficients; zeros when None.
        quiet: Log separation at debug level instead of warning.

    Returns:
        A `LogisticFit`.

    Raises:
        PyppivValueError: If the response is not binary.
        ConvergenceError: If neither convergence nor separation is reached.

    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_design(design, y)
    if not np.isin(y, (0.0, 1.0)).all():
        raise PyppivValueError("logistic response must be 0 or 1")
    k = design.shape[1]

    coef = np.zeros(k) if start is None else np.asarray(start, dtype=float).copy()
    eta = design @ coef
    loglik = _bernoulli_loglik(y, eta)
    path = [-2.0 * loglik]
    separated = converged = False
    info = np.eye(k)
    n_iter = 0

    while True:
        p = expit(eta)
        score = design.T @ (y - p)
        weights = p * (1.0 - p)
        info = design.T @ (design * weights[:, None])
        max_abs_score = float(np.max(np.abs(score)))
        if max_abs_score <= tol:
            converged = True
            break
        if np.max(np.abs(coef)) > separation_bound:
            separated = True
            break
        if n_iter >= max_iter:
            break
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            separated = True
            break
        n_iter += 1
        for _ in range(40):
            new_coef = coef + step
            new_eta = design @ new_coef
            new_loglik = _bernoulli_loglik(y, new_eta)
            if new_loglik >= loglik - 1e-12 * max(1.0, abs(loglik)):
                break
            step = step / 2.0
        else:
            break
        coef, eta = new_coef, new_eta
        loglik = new_loglik
        path.append(-2.0 * loglik)

    try:
        coef_cov = linalg.inv(info)
    except (linalg.LinAlgError, ValueError):
        coef_cov = np.full((k, k), np.nan)
    fit = LogisticFit(
        coef=coef,
        loglik=loglik,
        deviance=-2.0 * loglik,
        converged=converged,
        n_iter=n_iter,
        separated=separated,
        deviance_path=np.array(path),
        max_abs_score=max_abs_score,
        coef_cov=coef_cov,
    )
    if separated:
        log = logger.debug if quiet else logger.warning
        log(
            "logistic fit separated after %d iterations (max |coef| %.1f)",
            n_iter,
            np.max(np.abs(coef)),
        )
    elif not converged:
        raise ConvergenceError(
            f"logistic regression did not converge in {max_iter} iterations "
            f"(max |score| {max_abs_score:.3g})",
            fit=fit,
        )
    return fit


def partial_f(full: OlsFit, restricted: OlsFit, q: int = 1) -> float:
    """Partial F statistic of ``q`` dropped columns.

    Args:
        full: Fit including the tested columns.
        restricted: Fit without them.
        q: Number of dropped columns.

    Returns:
        ``((rss_r - rss_f) / q) / (rss_f / df_f)``, at least 0.

    Raises:
        PyppivValueError: If ``q`` is below 1.
        NestingError: If the restricted fit is clearly better than the full one.

    """
    if q < 1:
        raise PyppivValueError(f"q must be at least 1, got {q}")
    gain = restricted.rss - full.rss
    if gain < -1e-8 * max(1.0, full.rss):
        raise NestingError(
            f"restricted model has smaller rss ({restricted.rss:.6g} < {full.rss:.6g})"
        )
    gain = max(gain, 0.0)
    if full.rss <= 0.0:
        return float("inf") if gain > 0 else 0.0
    return float((gain / q) / (full.rss / full.df_resid))

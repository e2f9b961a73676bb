"""Laplace approximated logistic mixed models.

The random effects of cluster ``j`` are written ``b_j = L u_j`` with
``u_j ~ N(0, I)`` and ``L`` the lower Cholesky factor of their covariance.
``L`` is parameterized on the log-Cholesky scale (log of the diagonal,
off-diagonal as is) so every parameter vector maps to a PSD covariance.

For fixed parameters the posterior modes ``u_j`` are found by Newton's method,
all clusters at once. The approximate marginal log-likelihood is::

    sum_j [ loglik_j(u_j) - |u_j|^2 / 2 - log det(A_j' W_j A_j + I) / 2 ]

and its gradient is computed analytically, including the dependence of the
modes on the parameters.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from pyppiv.exceptions import ConvergenceError, PyppivValueError
from pyppiv.models import GlmmFit
from pyppiv.numerics import expit, fit_logistic


logger = logging.getLogger(__name__)

RANDOM_SPECS = ("intercept", "intercept_and_slope")
BOUNDARY_VARIANCE = 1e-8
"""Variance below which a component counts as collapsed."""
LOG_DIAG_BOUNDS = (-12.0, 5.0)
"""Box for the log Cholesky diagonal."""


def random_design(
    random_spec: str, n: int, time: Optional[np.ndarray] = None
) -> np.ndarray:
    """Per-row random effect covariates.

    Args:
        random_spec: ``"intercept"`` or ``"intercept_and_slope"``.
        n: Number of rows.
        time: Time column, required for random slopes.

    Returns:
        N×1 or N×2 matrix.

    Raises:
        PyppivValueError: If ``random_spec`` is unknown or the time column is missing.

    """
    if random_spec == "intercept":
        return np.ones((n, 1))
    if random_spec == "intercept_and_slope":
        if time is None:
            raise PyppivValueError("a random slope needs a time column")
        time = np.asarray(time, dtype=float)
        if time.shape != (n,):
            raise PyppivValueError("time column length differs from the design")
        return np.column_stack([np.ones(n), time])
    raise PyppivValueError(
        f"unknown random effect spec '{random_spec}' (use {RANDOM_SPECS})"
    )


def cholesky_factor(theta: np.ndarray, q: int) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Cholesky factor and its derivatives from log-Cholesky parameters.

    Args:
        theta: ``[log l11]`` or ``[log l11, l21, log l22]``.
        q: Dimension of the random effects.

    Returns:
        ``L`` and the list of ``dL / dtheta_k``.

    """
    if q == 1:
        l11 = np.exp(theta[0])
        return np.array([[l11]]), [np.array([[l11]])]
    l11, l21, l22 = np.exp(theta[0]), theta[1], np.exp(theta[2])
    chol = np.array([[l11, 0.0], [l21, l22]])
    d0 = np.array([[l11, 0.0], [0.0, 0.0]])
    d1 = np.array([[0.0, 0.0], [1.0, 0.0]])
    d2 = np.array([[0.0, 0.0], [0.0, l22]])
    return chol, [d0, d1, d2]


class LaplaceObjective:
    """Approximate marginal log-likelihood of a logistic mixed model.

    Args:
        design: N×p fixed effect design.
        codes: Cluster code of each row, ``0..J-1``.
        n_clusters: Number of clusters ``J``.
        zr: N×q random effect design.
        y: Binary response.
    """

    def __init__(
        self,
        design: np.ndarray,
        codes: np.ndarray,
        n_clusters: int,
        zr: np.ndarray,
        y: np.ndarray,
    ) -> None:
        self.x = design
        self.codes = codes
        self.n_clusters = n_clusters
        self.zr = zr
        self.y = y
        self.p = design.shape[1]
        self.q = zr.shape[1]
        self.modes = np.zeros((n_clusters, self.q))

    @property
    def n_theta(self) -> int:
        """Number of covariance parameters."""
        return 1 if self.q == 1 else 3

    def _cluster_sum(self, values: np.ndarray) -> np.ndarray:
        flat = values.reshape(values.shape[0], -1)
        out = np.empty((self.n_clusters, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.bincount(
                self.codes, weights=flat[:, c], minlength=self.n_clusters
            )
        return out.reshape((self.n_clusters,) + values.shape[1:])

    def _cluster_loglik(self, eta: np.ndarray, u: np.ndarray) -> np.ndarray:
        rows = self.y * eta - np.logaddexp(0.0, eta)
        per_cluster = np.bincount(self.codes, weights=rows, minlength=self.n_clusters)
        return per_cluster - 0.5 * np.sum(u * u, axis=1)

    def _hessian(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        outer = w[:, None, None] * a[:, :, None] * a[:, None, :]
        return self._cluster_sum(outer) + np.eye(self.q)

    def find_modes(
        self, offset: np.ndarray, a: np.ndarray, max_iter: int = 100
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior modes of ``u`` for all clusters.

        Args:
            offset: Fixed part of the linear predictor.
            a: Rows of ``Zr L``.
            max_iter: Newton iterations allowed.

        Returns:
            The modes (J×q) and the linear predictor at the modes.

        Raises:
            ConvergenceError: If the modes do not settle.

        """
        u = self.modes.copy()
        eta = offset + np.einsum("nq,nq->n", a, u[self.codes])
        h = self._cluster_loglik(eta, u)
        for _ in range(max_iter):
            p = expit(eta)
            grad = self._cluster_sum(a * (self.y - p)[:, None]) - u
            if np.max(np.abs(grad)) <= 1e-11:
                break
            hess = self._hessian(a, p * (1.0 - p))
            step = np.linalg.solve(hess, grad[..., None])[..., 0]
            scale = np.ones(self.n_clusters)
            for _ in range(40):
                cand = u + scale[:, None] * step
                cand_eta = offset + np.einsum("nq,nq->n", a, cand[self.codes])
                cand_h = self._cluster_loglik(cand_eta, cand)
                worse = cand_h < h - 1e-12 * np.maximum(1.0, np.abs(h))
                if not worse.any():
                    break
                scale[worse] /= 2.0
            u, eta, h = cand, cand_eta, cand_h
            if np.max(np.abs(scale[:, None] * step)) <= 1e-13:
                break
        else:
            raise ConvergenceError("random effect modes did not converge")
        self.modes = u
        return u, eta

    def evaluate(
        self, params: np.ndarray, gradient: bool = True
    ) -> Tuple[float, np.ndarray]:
        """Log-likelihood and its gradient.

        Args:
            params: Fixed effects followed by log-Cholesky parameters.
            gradient: Whether to compute the gradient.

        Returns:
            The Laplace log-likelihood and its gradient (empty if not requested).

        """
        beta, theta = params[: self.p], params[self.p :]
        chol, dchol = cholesky_factor(theta, self.q)
        a = self.zr @ chol
        offset = self.x @ beta
        u, eta = self.find_modes(offset, a)
        p = expit(eta)
        w = p * (1.0 - p)
        hess = self._hessian(a, w)
        _, logdet = np.linalg.slogdet(hess)
        loglik = float(np.sum(self._cluster_loglik(eta, u)) - 0.5 * np.sum(logdet))
        if not gradient:
            return loglik, np.empty(0)

        codes = self.codes
        resid = self.y - p
        w1 = w * (1.0 - 2.0 * p)
        hinv = np.linalg.inv(hess)
        hinv_rows = hinv[codes]
        lev = np.einsum("nq,nqk,nk->n", a, hinv_rows, a)

        cross = self._cluster_sum(w[:, None, None] * a[:, :, None] * self.x[:, None, :])
        hinv_cross = hinv @ cross
        d_eta_beta = self.x - np.einsum("nq,nqp->np", a, hinv_cross[codes])
        grad_beta = self.x.T @ resid - 0.5 * d_eta_beta.T @ (w1 * lev)

        grad_theta = np.empty(len(dchol))
        u_rows = u[codes]
        for k, dl in enumerate(dchol):
            da = self.zr @ dl
            s = np.einsum("nq,nq->n", da, u_rows)
            dh = float(resid @ s)
            dg = self._cluster_sum(da * resid[:, None] - a * (w * s)[:, None])
            du = np.einsum("jqk,jk->jq", hinv, dg)
            d_eta = s + np.einsum("nq,nq->n", a, du[codes])
            trace = float(np.sum(w1 * d_eta * lev)) + 2.0 * float(
                np.sum(w * np.einsum("nq,nqk,nk->n", a, hinv_rows, da))
            )
            grad_theta[k] = dh - 0.5 * trace
        return loglik, np.concatenate([grad_beta, grad_theta])


def _codes(cluster_ids: Sequence[object]) -> Tuple[np.ndarray, np.ndarray]:
    labels, codes = np.unique(np.asarray(cluster_ids), return_inverse=True)
    return labels, codes.astype(np.int64)


def laplace_objective(
    design: np.ndarray,
    cluster_ids: Sequence[object],
    y: np.ndarray,
    params: np.ndarray,
    random_spec: str = "intercept",
    time: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Evaluate the Laplace log-likelihood and its analytic gradient.

    Args:
        design: N×p fixed effect design.
        cluster_ids: Cluster label per row.
        y: Binary response.
        params: Fixed effects followed by log-Cholesky parameters.
        random_spec: ``"intercept"`` or ``"intercept_and_slope"``.
        time: Time column for random slopes.

    Returns:
        The log-likelihood and its gradient.

    """
    design = np.asarray(design, dtype=float)
    labels, codes = _codes(cluster_ids)
    zr = random_design(random_spec, design.shape[0], time)
    problem = LaplaceObjective(
        design, codes, labels.size, zr, np.asarray(y, dtype=float)
    )
    return problem.evaluate(np.asarray(params, dtype=float))


def fit_glmm_logistic(
    design: np.ndarray,
    cluster_ids: Sequence[object],
    y: np.ndarray,
    random_spec: str = "intercept",
    time: Optional[np.ndarray] = None,
    max_iter: int = 500,
) -> GlmmFit:
    """Fit a logistic mixed model by maximizing the Laplace approximation.

    Fixed effects start at the ordinary logistic fit. When every cluster has a
    single observation the random effects are not identified and the ordinary
    logistic fit is returned flagged.

    Args:
        design: N×p fixed effect design, intercept included.
        cluster_ids: Cluster label per row.
        y: Binary response.
        random_spec: ``"intercept"`` or ``"intercept_and_slope"``.
        time: Time column for random slopes.
        max_iter: Optimizer iterations allowed.

    Returns:
        A `GlmmFit`.

    Raises:
        PyppivValueError: If there are fewer than two clusters.
        ConvergenceError: If the optimizer fails away from an optimum.

    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    labels, codes = _codes(cluster_ids)
    n_clusters = labels.size
    if n_clusters < 2:
        raise PyppivValueError(f"need at least 2 clusters, got {n_clusters}")
    zr = random_design(random_spec, design.shape[0], time)
    q = zr.shape[1]

    start = fit_logistic(design, y, quiet=True)
    notes: List[str] = []
    if np.bincount(codes).max() == 1:
        msg = "every cluster has one observation; random effects are not identified"
        logger.warning(msg)
        return GlmmFit(
            fixed_coef=start.coef,
            var_components=np.zeros((q, q)),
            ranef=np.zeros((n_clusters, q)),
            cluster_ids=labels,
            laplace_loglik=start.loglik,
            converged=start.converged,
            boundary=True,
            identifiable=False,
            theta=np.full(1 if q == 1 else 3, LOG_DIAG_BOUNDS[0]),
            n_iter=0,
            notes=[msg],
        )

    problem = LaplaceObjective(design, codes, n_clusters, zr, y)
    theta0 = [np.log(0.5)] if q == 1 else [np.log(0.5), 0.0, np.log(0.1)]
    x0 = np.concatenate([start.coef, theta0])
    bounds = [(None, None)] * design.shape[1]
    if q == 1:
        bounds += [LOG_DIAG_BOUNDS]
    else:
        bounds += [LOG_DIAG_BOUNDS, (None, None), LOG_DIAG_BOUNDS]

    def _negative(params: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = problem.evaluate(params)
        return -value, -grad

    result = optimize.minimize(
        _negative,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-13, "gtol": 1e-7},
    )
    params = result.x
    loglik, grad = problem.evaluate(params)
    chol, _ = cholesky_factor(params[design.shape[1] :], q)
    cov = chol @ chol.T
    at_lower = np.zeros_like(params, dtype=bool)
    for k, (lo, _) in enumerate(bounds):
        at_lower[k] = lo is not None and params[k] <= lo + 1e-8
    free_grad = np.where(at_lower & (grad < 0), 0.0, grad)
    converged = bool(result.success) or float(np.max(np.abs(free_grad))) <= 1e-3

    boundary = bool(np.min(np.diag(cov)) < BOUNDARY_VARIANCE)
    if boundary:
        msg = "random effect variance at the boundary; fit reduces to ordinary logistic"
        logger.warning(msg)
        notes.append(msg)

    fit = GlmmFit(
        fixed_coef=params[: design.shape[1]],
        var_components=cov,
        ranef=problem.modes @ chol.T,
        cluster_ids=labels,
        laplace_loglik=loglik,
        converged=converged,
        boundary=boundary,
        identifiable=True,
        theta=params[design.shape[1] :],
        n_iter=int(result.nit),
        notes=notes,
    )
    if not converged:
        raise ConvergenceError(
            f"mixed model optimizer failed: {result.message}", fit=fit
        )
    return fit

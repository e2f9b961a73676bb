"""Regression fit records."""

import numpy as np

from .base import BaseModel


class OlsFit(BaseModel):
    """Ordinary least squares fit.

    Attributes:
        coef: Coefficient vector.
        coef_cov: ``sigma2 * inv(X'X)``.
        rss: Residual sum of squares.
        df_resid: Residual degrees of freedom ``N - k``.
        sigma2: ``rss / df_resid``.
        fitted: Fitted values.
        xtx_inv: ``inv(X'X)``.
        columns: Column names of the design.
    """

    @property
    def se(self) -> np.ndarray:
        """Standard errors of the coefficients."""
        return np.sqrt(np.clip(np.diag(self.coef_cov), 0.0, None))


class LogisticFit(BaseModel):
    """Logistic regression fit by iteratively reweighted least squares.

    Attributes:
        coef: Coefficient vector.
        loglik: Bernoulli log-likelihood at ``coef``.
        deviance: ``-2 * loglik``.
        converged: Whether the score criterion was met.
        n_iter: Newton iterations performed.
        separated: Whether a coefficient exceeded the separation bound.
        deviance_path: Deviance after each iteration, starting value first.
        max_abs_score: Largest absolute score entry at ``coef``.
        coef_cov: Inverse Fisher information at ``coef``.
    """

    pass


class GlmmFit(BaseModel):
    """Laplace approximated logistic mixed model fit.

    Attributes:
        fixed_coef: Fixed effect coefficients.
        var_components: Random effect covariance (1x1 or 2x2).
        ranef: Posterior modes, one row per cluster.
        cluster_ids: Cluster label of each ``ranef`` row.
        laplace_loglik: Approximate marginal log-likelihood at the optimum.
        converged: Whether the optimizer reported success.
        boundary: Whether a variance component fell below the boundary.
        identifiable: False when every cluster has a single observation.
        theta: Log-Cholesky parameters of ``var_components``.
        n_iter: Outer optimizer iterations.
        notes: Warnings raised while fitting.
    """

    pass

"""Treatment effect estimates."""

from marshmallow import fields

from .base import BaseModel, BaseSchema


WEAK_F = 10.0
"""First-stage F below which an instrument is considered weak."""


class EstimateResult(BaseModel):
    """Two-stage least squares (or as-treated) estimate of the effect of B vs A.

    Attributes:
        method: Canonical method name.
        beta_hat: Estimated treatment effect.
        se: Standard error from the outcome model.
        ci_low: Lower 95% bound, ``beta_hat - 1.96 se``.
        ci_high: Upper 95% bound, ``beta_hat + 1.96 se``.
        f_statistic: Partial F of the instrument in the first stage (0 when
            there is no first stage).
        n_used: Rows of the second-stage design.
        j_used: Providers represented in the second-stage design.
        weak: ``f_statistic < 10`` for instrumented estimates.
        se_kind: ``"naive"`` or ``"corrected"``.
        treated_share: Proportion of ``X = 1`` in the analysis sample.
        notes: Warnings raised along the way.
        diagnostics: Diagnostics of the instrument construction, if any;
            not serialized.
    """

    def covers(self, beta: float) -> bool:
        """Check whether the confidence interval contains a value.

        Args:
            beta: The value to check.

        Returns:
            True if ``ci_low <= beta <= ci_high``.

        """
        return bool(self.ci_low <= beta <= self.ci_high)


class EstimateResultSchema(BaseSchema):
    """Schema for `EstimateResult` rows."""

    __model__ = EstimateResult

    method = fields.Str()
    beta_hat = fields.Float()
    se = fields.Float()
    ci_low = fields.Float()
    ci_high = fields.Float()
    f_statistic = fields.Float()
    n_used = fields.Int()
    j_used = fields.Int()
    weak = fields.Bool()
    se_kind = fields.Str()
    treated_share = fields.Float()
    notes = fields.List(fields.Str())


class LedgerRow(BaseModel):
    """Data preparation bookkeeping for one method.

    Attributes:
        method: Canonical method name.
        n_j_min: Minimum provider size applied.
        cc_mode: Complete case mode applied.
        outcome_covariates: Covariate set used in the regressions.
        n_records_in: Records before preparation.
        n_providers_in: Providers before preparation.
        n_dropped_complete_case: Records removed by the complete case filter.
        n_dropped_provider_size: Records removed by the provider size filter.
        n_dropped_instrument: Records removed for a non-calculable instrument.
        providers_dropped: Providers removed by any step.
        dropped_provider_ids: Identifiers of those providers, in input order.
        n_used: Records in the analysis.
        j_used: Providers in the analysis.
        treated_share: Proportion of ``X = 1`` in the analysis.
        status: ``"ok"`` or ``"no_data"``.
    """

    pass


class LedgerRowSchema(BaseSchema):
    """Schema for `LedgerRow`."""

    __model__ = LedgerRow

    method = fields.Str()
    n_j_min = fields.Int()
    cc_mode = fields.Str()
    outcome_covariates = fields.Str()
    n_records_in = fields.Int()
    n_providers_in = fields.Int()
    n_dropped_complete_case = fields.Int()
    n_dropped_provider_size = fields.Int()
    n_dropped_instrument = fields.Int()
    providers_dropped = fields.Int()
    dropped_provider_ids = fields.List(fields.Str())
    n_used = fields.Int()
    j_used = fields.Int()
    treated_share = fields.Float(allow_nan=True)
    status = fields.Str()

"""Monte-Carlo performance summaries."""

from marshmallow import fields

from .base import BaseModel, BaseSchema


class MetricsRow(BaseModel):
    """Performance of one method over the replications of one cell.

    Attributes:
        generator: ``"A"`` or ``"B"``.
        n_j: Patients per provider.
        missingness: ``"none"``, ``"mcar"`` or ``"mnar"``.
        method: Canonical method name.
        bias: ``mean(beta_hat) - beta``.
        mcse: ``sd(beta_hat) / sqrt(n_reps)``.
        coverage: Percentage of intervals containing ``beta``.
        rmse: ``sqrt(mean((beta_hat - beta) ** 2))``.
        mean_f: Mean first-stage F.
        n_reps: Replications that produced an estimate.
        n_failed: Replications where the method failed.
    """

    pass


class MetricsRowSchema(BaseSchema):
    """Schema for `MetricsRow`."""

    __model__ = MetricsRow

    generator = fields.Str()
    n_j = fields.Int()
    missingness = fields.Str()
    method = fields.Str()
    bias = fields.Float(allow_nan=True)
    mcse = fields.Float(allow_nan=True)
    coverage = fields.Float(allow_nan=True)
    rmse = fields.Float(allow_nan=True)
    mean_f = fields.Float(allow_nan=True)
    n_reps = fields.Int()
    n_failed = fields.Int()


class ReplicationRow(BaseModel):
    """One method's result in one replication.

    Attributes:
        generator: ``"A"`` or ``"B"``.
        n_j: Patients per provider.
        missingness: Missingness mechanism.
        rep: 0-based replication index.
        seed: Seed of the replication stream.
        method: Canonical method name.
        beta_hat: Estimate, NaN on failure.
        se: Standard error, NaN on failure.
        ci_low: Lower bound, NaN on failure.
        ci_high: Upper bound, NaN on failure.
        f_statistic: First-stage F, NaN on failure.
        n_used: Rows used, 0 on failure.
        j_used: Providers used, 0 on failure.
        error: Failure message, empty on success.
    """

    @property
    def ok(self) -> bool:
        """Whether the method produced an estimate."""
        return not self.error


class ReplicationRowSchema(BaseSchema):
    """Schema for `ReplicationRow`."""

    __model__ = ReplicationRow

    generator = fields.Str()
    n_j = fields.Int()
    missingness = fields.Str()
    rep = fields.Int()
    seed = fields.Int()
    method = fields.Str()
    beta_hat = fields.Float(allow_nan=True)
    se = fields.Float(allow_nan=True)
    ci_low = fields.Float(allow_nan=True)
    ci_high = fields.Float(allow_nan=True)
    f_statistic = fields.Float(allow_nan=True)
    n_used = fields.Int()
    j_used = fields.Int()
    error = fields.Str()

"""Simulation scenario and generating coefficients."""

from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np
from marshmallow import ValidationError, fields, pre_load, validate, validates_schema

from .base import JSON, BaseModel, StrictSchema


TRUE_BETA = 1.0
BETA_PP = 0.7


class Generator(str, Enum):
    """How treatment is generated."""

    A = "A"
    B = "B"


class Missingness(str, Enum):
    """Missing data mechanism applied to the first covariate."""

    NONE = "none"
    MCAR = "mcar"
    MNAR = "mnar"


class Link(str, Enum):
    """Link between the treatment predictor and its probability."""

    LOGIT = "logit"
    LINEAR = "linear"


class YModel(BaseModel):
    """Outcome model ``Y = g0 + beta X + gw1 W1 + gw2 W2 + gu U + e``."""

    pass


class XModelA(BaseModel):
    """Treatment model driven by a binary provider preference."""

    pass


class XModelB(BaseModel):
    """Treatment model with provider random intercepts and time slopes."""

    @property
    def omega_matrix(self) -> np.ndarray:
        """Covariance of the provider intercept and slope."""
        return np.array(
            [[self.omega_00, self.omega_01], [self.omega_01, self.omega_11]]
        )


class PPProcess(BaseModel):
    """Binary preference process: initial state and a single switch."""

    pass


class MnarModel(BaseModel):
    """Two factor selection model for the missingness of W1."""

    pass


class CovariateModel(BaseModel):
    """Covariate and confounder distributions."""

    pass


class GenCoefficients(BaseModel):
    """All coefficients of the generating processes.

    Attributes:
        y_model: `YModel`.
        x_model_a: `XModelA`.
        x_model_b: `XModelB`.
        pp_process: `PPProcess`.
        mnar_model: `MnarModel`.
        covariates: `CovariateModel`.
        calibrated: Whether the set came out of calibration.
    """

    pass


def _probability() -> Any:
    return validate.Range(min=0.0, max=1.0)


class YModelSchema(StrictSchema):
    """Schema for `YModel`."""

    __model__ = YModel

    gamma_y0 = fields.Float(load_default=0.0)
    beta = fields.Float(load_default=TRUE_BETA, validate=validate.Equal(TRUE_BETA))
    gamma_yw1 = fields.Float(load_default=0.5)
    gamma_yw2 = fields.Float(load_default=0.5)
    gamma_yu = fields.Float(load_default=1.5)
    sigma_y = fields.Float(load_default=1.4, validate=validate.Range(min=0.0))


class XModelASchema(StrictSchema):
    """Schema for `XModelA`."""

    __model__ = XModelA

    gamma_x0 = fields.Float(load_default=-0.9)
    beta_pp = fields.Float(load_default=BETA_PP)
    gamma_xu = fields.Float(load_default=1.5)
    gamma_xw1 = fields.Float(load_default=0.3)
    gamma_xw2 = fields.Float(load_default=0.3)


class XModelBSchema(StrictSchema):
    """Schema for `XModelB`."""

    __model__ = XModelB

    gamma_x0 = fields.Float(load_default=0.12)
    gamma_xt = fields.Float(load_default=0.05)
    gamma_xu = fields.Float(load_default=1.5)
    gamma_xw1 = fields.Float(load_default=0.3)
    gamma_xw2 = fields.Float(load_default=0.3)
    omega_00 = fields.Float(load_default=1.0, validate=validate.Range(min=0.0))
    omega_01 = fields.Float(load_default=0.0)
    omega_11 = fields.Float(load_default=0.04, validate=validate.Range(min=0.0))

    @validates_schema
    def check_psd(self, data: JSON, **kwargs: Any) -> None:
        """Check that the random effect covariance is positive semi-definite.

        Args:
            data: The loaded fields.
            **kwargs: Unused.

        Raises:
            ValidationError: If the covariance is not PSD.

        """
        o00 = data.get("omega_00", 1.0)
        o01 = data.get("omega_01", 0.0)
        o11 = data.get("omega_11", 0.04)
        if o00 * o11 - o01 * o01 < -1e-12:
            raise ValidationError("omega is not positive semi-definite", "omega_01")


class PPProcessSchema(StrictSchema):
    """Schema for `PPProcess`."""

    __model__ = PPProcess

    p_initial_b = fields.Float(load_default=0.6, validate=_probability())
    p_switch_a_to_b = fields.Float(load_default=0.7, validate=_probability())
    p_switch_b_to_a = fields.Float(load_default=0.4, validate=_probability())
    switch_window_low = fields.Float(load_default=0.4, validate=_probability())
    switch_window_high = fields.Float(load_default=0.7, validate=_probability())

    @validates_schema
    def check_window(self, data: JSON, **kwargs: Any) -> None:
        """Check that the switch window is ordered.

        Args:
            data: The loaded fields.
            **kwargs: Unused.

        Raises:
            ValidationError: If the low end exceeds the high end.

        """
        if data.get("switch_window_low", 0.4) > data.get("switch_window_high", 0.7):
            raise ValidationError("switch window is empty", "switch_window_low")


class MnarModelSchema(StrictSchema):
    """Schema for `MnarModel`."""

    __model__ = MnarModel

    gamma_r0 = fields.Float(load_default=0.6)
    gamma_rw1 = fields.Float(load_default=0.5)
    gamma_rw2 = fields.Float(load_default=0.3)
    gamma_ru = fields.Float(load_default=0.5)
    gamma_rystar = fields.Float(load_default=1.0)
    gamma_rv = fields.Float(load_default=0.5)
    gamma_rvw1 = fields.Float(load_default=0.2)
    gamma_rvw2 = fields.Float(load_default=0.2)
    v_low = fields.Float(load_default=-2.0)
    v_high = fields.Float(load_default=2.0)
    v_level = fields.Str(
        load_default="provider", validate=validate.OneOf(["provider", "patient"])
    )


class CovariateModelSchema(StrictSchema):
    """Schema for `CovariateModel`."""

    __model__ = CovariateModel

    mu_sd = fields.Float(load_default=0.5, validate=validate.Range(min=0.0))
    w_sd = fields.Float(load_default=2.0, validate=validate.Range(min=0.0))
    u_sd = fields.Float(load_default=1.0, validate=validate.Range(min=0.0))


class GenCoefficientsSchema(StrictSchema):
    """Schema for `GenCoefficients`; every block falls back to its defaults."""

    __model__ = GenCoefficients

    y_model = fields.Nested(YModelSchema)
    x_model_a = fields.Nested(XModelASchema)
    x_model_b = fields.Nested(XModelBSchema)
    pp_process = fields.Nested(PPProcessSchema)
    mnar_model = fields.Nested(MnarModelSchema)
    covariates = fields.Nested(CovariateModelSchema)
    calibrated = fields.Bool(load_default=False)

    @pre_load
    def fill_blocks(self, data: JSON, **kwargs: Any) -> JSON:
        """Give absent blocks an empty mapping so their field defaults apply.

        Args:
            data: The raw mapping.
            **kwargs: Unused.

        Returns:
            The mapping with every coefficient block present.

        """
        data = dict(data)
        for block in COEFFICIENT_BLOCKS:
            data.setdefault(block, {})
        return data


COEFFICIENT_BLOCKS: Tuple[str, ...] = (
    "y_model",
    "x_model_a",
    "x_model_b",
    "pp_process",
    "mnar_model",
    "covariates",
)

GENERATOR_SIGMA_Y = {Generator.A: 1.4, Generator.B: 1.17}
"""Default outcome noise per generator so both reach their variance targets."""


def default_coefficients(generator: Generator = Generator.A) -> GenCoefficients:
    """Shipped coefficient set for a generator.

    Args:
        generator: The generator the set is meant for.

    Returns:
        A `GenCoefficients` instance.

    """
    sigma_y = GENERATOR_SIGMA_Y[Generator(generator)]
    data: Dict[str, Any] = {"y_model": {"sigma_y": sigma_y}}
    return GenCoefficientsSchema().load(data)  # type: ignore


def coefficients_to_dict(coefs: GenCoefficients) -> Dict[str, Dict[str, Any]]:
    """Plain nested dictionary of a coefficient set.

    Args:
        coefs: The coefficient set.

    Returns:
        ``{block: {name: value}}`` plus a ``calibrated`` flag block.

    """
    return GenCoefficientsSchema().dump(coefs)  # type: ignore


class ScenarioConfig(BaseModel):
    """One cell of the simulation grid.

    Attributes:
        generator: `Generator`.
        n_providers: Number of providers ``J``.
        n_j: Patients per provider.
        missingness: `Missingness`.
        target_missing_rate: Masking probability for MCAR.
        n_reps: Replications.
        seed: Master seed.
        coefficients: `GenCoefficients`.
        link: `Link` for treatment generation.
        se_kind: ``"naive"`` or ``"corrected"``.
        cell: Index of the cell inside its study.
    """

    @property
    def label(self) -> str:
        """Short description used in logs."""
        return f"gen{self.generator.value} n_j={self.n_j} {self.missingness.value}"

"""Data models and schemas."""

from .base import BaseModel, BaseSchema, StrictSchema, UnknownModel
from .estimate import (
    WEAK_F,
    EstimateResult,
    EstimateResultSchema,
    LedgerRow,
    LedgerRowSchema,
)
from .fits import GlmmFit, LogisticFit, OlsFit
from .instrument import (
    BENCHMARKS,
    CONSTRUCTION_METHODS,
    ChangeDecision,
    ChangeType,
    CompleteCaseMode,
    CovariateSet,
    InstrumentSeries,
    Level,
    MethodId,
    MethodRequirements,
    method_label,
    parse_method,
    prev_window,
)
from .manifest import RunManifest, RunManifestSchema
from .metrics import (
    MetricsRow,
    MetricsRowSchema,
    ReplicationRow,
    ReplicationRowSchema,
)
from .panel import CovariateSchema, PanelDataset, PatientRecord, Violation
from .scenario import (
    BETA_PP,
    TRUE_BETA,
    GenCoefficients,
    GenCoefficientsSchema,
    Generator,
    Link,
    Missingness,
    ScenarioConfig,
    coefficients_to_dict,
    default_coefficients,
)


__all__ = [
    # Base
    "BaseModel",
    "BaseSchema",
    "StrictSchema",
    "UnknownModel",
    # Panel
    "CovariateSchema",
    "PanelDataset",
    "PatientRecord",
    "Violation",
    # Instruments
    "BENCHMARKS",
    "CONSTRUCTION_METHODS",
    "ChangeDecision",
    "ChangeType",
    "CompleteCaseMode",
    "CovariateSet",
    "InstrumentSeries",
    "Level",
    "MethodId",
    "MethodRequirements",
    "method_label",
    "parse_method",
    "prev_window",
    # Fits
    "GlmmFit",
    "LogisticFit",
    "OlsFit",
    # Estimates
    "WEAK_F",
    "EstimateResult",
    "EstimateResultSchema",
    "LedgerRow",
    "LedgerRowSchema",
    # Simulation
    "BETA_PP",
    "TRUE_BETA",
    "GenCoefficients",
    "GenCoefficientsSchema",
    "Generator",
    "Link",
    "Missingness",
    "ScenarioConfig",
    "coefficients_to_dict",
    "default_coefficients",
    "MetricsRow",
    "MetricsRowSchema",
    "ReplicationRow",
    "ReplicationRowSchema",
    # Manifest
    "RunManifest",
    "RunManifestSchema",
]

"""Preference-based instrumental variables: construction, estimation and simulation."""

__version__ = "0.1.0"

from . import exceptions  # noqa: E402
from .construct import construct  # noqa: E402
from .data import complete_case, filter_min_provider_size, validate  # noqa: E402
from .models import PanelDataset  # noqa: E402
from .pipeline import (  # noqa: E402
    run_analysis,
    run_method,
    run_observational,
    run_pp_benchmarks,
)
from .simulation import (  # noqa: E402
    calibrate,
    gen_population_A,
    gen_population_B,
    run_scenario,
)


__all__ = [
    "__version__",
    "PanelDataset",
    "calibrate",
    "complete_case",
    "construct",
    "exceptions",
    "filter_min_provider_size",
    "gen_population_A",
    "gen_population_B",
    "run_analysis",
    "run_method",
    "run_observational",
    "run_pp_benchmarks",
    "run_scenario",
    "validate",
]

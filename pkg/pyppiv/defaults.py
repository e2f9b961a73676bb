"""Calibrated default coefficient sets, computed once and cached."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pandas as pd

from pyppiv import __version__
from pyppiv.config import config_digest, load_coefficients, render_coefficients
from pyppiv.exceptions import ConfigError
from pyppiv.models import (
    GenCoefficients,
    Generator,
    Link,
    Missingness,
    ScenarioConfig,
    coefficients_to_dict,
    default_coefficients,
)
from pyppiv.simulation import calibrate
from pyppiv.storage import read_table, write_table


logger = logging.getLogger(__name__)

CACHE_ROOT: Path = Path("~/.pyppiv").expanduser()
"""Directory holding the calibrated default sets and their audit.

Created on first calibration, not on import.
"""

SHIPPED_SEED = 20240101
SHIPPED_SIZE = 100_000


def cache_files(root: Optional[Union[Path, str]] = None) -> Tuple[Path, Path]:
    """Coefficient and audit files of this version under a cache directory.

    Args:
        root: The cache directory; defaults to `CACHE_ROOT`.

    Returns:
        ``(coefficients.cfg path, calibration.csv path)``.

    """
    root = CACHE_ROOT if root is None else Path(root)
    return (
        root.joinpath(f"coefficients-{__version__}.cfg"),
        root.joinpath(f"calibration-{__version__}.csv"),
    )


def is_default(generator: Union[Generator, str], coefs: GenCoefficients) -> bool:
    """Whether a set holds the uncalibrated defaults of its generator.

    Args:
        generator: The generator the set belongs to.
        coefs: The coefficient set.

    Returns:
        True when every block equals `default_coefficients`.

    """
    ours = coefficients_to_dict(coefs)
    shipped = coefficients_to_dict(default_coefficients(Generator(generator)))
    ours.pop("calibrated", None)
    shipped.pop("calibrated", None)
    return ours == shipped


def _shipped_scenario(generator: Generator) -> ScenarioConfig:
    return ScenarioConfig(
        generator=generator,
        n_providers=100,
        n_j=408,
        missingness=Missingness.MNAR,
        target_missing_rate=0.40,
        n_reps=1,
        seed=SHIPPED_SEED,
        coefficients=default_coefficients(generator),
        link=Link.LOGIT,
        se_kind="naive",
        cell=0,
    )


def _cached(coefficients_file: Path) -> Optional[Dict[str, Any]]:
    if not coefficients_file.is_file():
        return None
    try:
        sets = load_coefficients(str(coefficients_file))
    except ConfigError as exc:
        logger.warning("ignoring %s: %s", coefficients_file, exc)
        return None
    if not all(coefs.calibrated for coefs in sets.values()):
        logger.warning("ignoring %s: not calibration output", coefficients_file)
        return None
    return sets


def shipped_coefficients(
    root: Optional[Union[Path, str]] = None, n_large: int = SHIPPED_SIZE
) -> Dict[str, GenCoefficients]:
    """Calibrated default set of every generator.

    The first call calibrates both generators at 100 providers of 408
    patients under MNAR with a fixed seed and writes the sets and their
    audit to the cache. Later calls read the cache.

    Args:
        root: The cache directory; defaults to `CACHE_ROOT`.
        n_large: Population size of each calibration step.

    Returns:
        Calibrated `GenCoefficients` keyed by generator value.

    """
    coefficients_file, audit_file = cache_files(root)
    cached = _cached(coefficients_file)
    if cached is not None:
        logger.debug("calibrated defaults from %s", coefficients_file)
        return cached

    logger.info("calibrating default coefficients into %s", coefficients_file.parent)
    sets: Dict[str, GenCoefficients] = {}
    audit: List[Dict[str, Any]] = []
    for generator in Generator:
        result = calibrate(
            _shipped_scenario(generator), n_large=n_large, seed=SHIPPED_SEED
        )
        sets[generator.value] = result.coefficients
        audit.extend(
            dict(vars(row), generator=generator.value) for row in result.audit
        )

    text = render_coefficients(sets)
    coefficients_file.parent.mkdir(parents=True, exist_ok=True)
    coefficients_file.write_text(text)
    digest = config_digest(text.encode("utf-8"))
    write_table(pd.DataFrame(audit), str(audit_file), digest)
    return sets


def shipped_audit(root: Optional[Union[Path, str]] = None) -> pd.DataFrame:
    """Calibration audit of the cached default sets.

    Args:
        root: The cache directory; defaults to `CACHE_ROOT`.

    Returns:
        One row per calibrated parameter and generator; empty when absent.

    """
    _, audit_file = cache_files(root)
    if not audit_file.is_file():
        return pd.DataFrame()
    frame, _ = read_table(str(audit_file))
    return frame

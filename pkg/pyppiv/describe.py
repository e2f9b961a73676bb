"""Descriptive summaries of a panel."""

import logging
from typing import Dict

import numpy as np
import pandas as pd

from pyppiv.models import PanelDataset


logger = logging.getLogger(__name__)


def period_shares(dataset: PanelDataset) -> pd.DataFrame:
    """Share of treatment B per period.

    Args:
        dataset: The panel.

    Returns:
        One row per ``time`` with ``n``, ``n_treated`` and ``share_treated``.

    """
    frame = pd.DataFrame({"time": dataset.time_index, "x": dataset.x})
    out = frame.groupby("time")["x"].agg(n="size", n_treated="sum")
    out["n_treated"] = out["n_treated"].astype(int)
    out["share_treated"] = out["n_treated"] / out["n"]
    return out.reset_index()


def provider_summary(dataset: PanelDataset) -> pd.DataFrame:
    """Distribution of provider sizes and of provider treatment shares.

    Args:
        dataset: The panel.

    Returns:
        Rows ``size`` and ``share_treated`` with count, mean, sd and quantiles.

    """
    sizes = dataset.provider_sizes()
    treated = np.bincount(
        dataset.provider, weights=dataset.x, minlength=dataset.n_providers
    )
    shares = treated / np.maximum(sizes, 1)
    frame = pd.DataFrame({"size": sizes, "share_treated": shares})
    summary = frame.describe().T
    summary.index.name = "quantity"
    return summary.reset_index()


def missingness_table(dataset: PanelDataset) -> pd.DataFrame:
    """Missing values per analysed variable.

    Args:
        dataset: The panel.

    Returns:
        One row per outcome and covariate with ``n_missing`` and ``rate``.

    """
    counts: Dict[str, int] = {"outcome": int(np.isnan(dataset.y).sum())}
    for k, name in enumerate(dataset.covariate_schema.obs):
        counts[name] = int(np.isnan(dataset.w_obs[:, k]).sum())
    for k, name in enumerate(dataset.covariate_schema.miss):
        counts[name] = int(dataset.r[:, k].sum())
    n = max(dataset.n_records, 1)
    return pd.DataFrame(
        {
            "variable": list(counts),
            "n_missing": list(counts.values()),
            "rate": [c / n for c in counts.values()],
        }
    )


def describe(dataset: PanelDataset) -> Dict[str, pd.DataFrame]:
    """Every descriptive table of a panel.

    Args:
        dataset: The panel.

    Returns:
        Tables keyed ``periods``, ``providers`` and ``missingness``.

    """
    logger.info("describing %r", dataset)
    return {
        "periods": period_shares(dataset),
        "providers": provider_summary(dataset),
        "missingness": missingness_table(dataset),
    }

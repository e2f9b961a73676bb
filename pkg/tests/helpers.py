"""Shared test helpers: config reader, synthetic panels and brute-force oracles."""

import configparser
from os import path

import numpy as np


HERE = path.abspath(path.dirname(__file__))
CONFIG_FILENAME = path.join(HERE, "test_config.cfg")


def get_config(config_filename=CONFIG_FILENAME):
    """parse test config file

    Args:
        config_filename (str): path to config file

    Returns:
        (:obj:`configparser.ConfigParser`)

    """
    config = configparser.ConfigParser(
        interpolation=configparser.ExtendedInterpolation(),
        allow_no_value=True,
        delimiters=("="),
        inline_comment_prefixes=("#"),
    )

    local_filename = config_filename.replace(".cfg", "_local.cfg")
    if path.isfile(local_filename):
        config_filename = local_filename

    with open(config_filename, "r") as file:
        config.read_file(file)

    return config


def make_panel(sizes, seed=0, p_treat=0.5, missing_rate=0.0, shares=None, effect=1.0):
    """random panel with one observed and one partially observed covariate

    Args:
        sizes (list): patients per provider
        seed (int): seed
        p_treat (float): treatment probability when ``shares`` is None
        missing_rate (float): MCAR rate of the partially observed covariate
        shares (list): per provider treatment probability
        effect (float): treatment effect on the outcome

    Returns:
        (:obj:`pyppiv.models.PanelDataset`)

    """
    from pyppiv.models import CovariateSchema, PanelDataset

    rng = np.random.default_rng(seed)
    labels, order, x = [], [], []
    for j, n in enumerate(sizes):
        p = p_treat if shares is None else shares[j]
        labels += [f"p{j + 1}"] * n
        order += list(range(1, n + 1))
        x += list((rng.random(n) < p).astype(float))
    n_rows = len(x)
    x = np.array(x)
    w_obs = rng.normal(size=(n_rows, 1))
    w_full = rng.normal(size=(n_rows, 1))
    noise = rng.normal(size=n_rows)
    y = 0.5 + effect * x + 0.3 * w_obs[:, 0] + 0.2 * w_full[:, 0] + noise
    w_miss = w_full.copy()
    w_miss[rng.random(n_rows) < missing_rate, 0] = np.nan
    return PanelDataset.build(
        provider_labels=labels,
        order_index=order,
        x=x,
        y=y,
        w_obs=w_obs,
        w_miss=w_miss,
        covariate_schema=CovariateSchema(obs=["age"], miss=["bmi"]),
    )


def brute_prev_b(x, b):
    """share of B among the previous ``b`` treatments, by explicit loops"""
    out = []
    for i in range(len(x)):
        out.append(sum(x[i - b : i]) / b if i >= b else None)
    return out


def brute_running_share(x):
    """share of B among all previous treatments, by explicit loops"""
    out = []
    for i in range(len(x)):
        out.append(sum(x[:i]) / i if i >= 1 else None)
    return out


def as_optional(values):
    """numpy vector with NaN mapped to None"""
    return [None if np.isnan(v) else float(v) for v in values]

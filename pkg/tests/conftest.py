"""conftest.py: shared fixtures"""

import pytest

from tests import helpers


def pytest_addoption(parser):
    parser.addoption(
        "--acceptance-reps",
        type=int,
        default=50,
        help="replications per acceptance cell; 200 applies the tight bands",
    )


@pytest.fixture
def panel():
    """four providers of 12 patients each"""
    return helpers.make_panel([12, 12, 12, 12], seed=1)


@pytest.fixture
def tiny_panel():
    """hand written panel: provider a has 4 patients, provider b has 3"""
    from pyppiv.models import PanelDataset

    return PanelDataset.build(
        provider_labels=["a", "a", "b", "a", "b", "a", "b"],
        order_index=[1, 2, 1, 3, 2, 4, 3],
        x=[1, 0, 0, 1, 1, 1, 0],
        y=[1.0, 2.0, 3.0, float("nan"), 5.0, 6.0, 7.0],
        w_obs=[[0.1], [0.2], [0.3], [0.4], [0.5], [0.6], [0.7]],
        w_miss=[[1.0], [float("nan")], [3.0], [4.0], [5.0], [6.0], [7.0]],
    )


@pytest.fixture
def scenario():
    """small generator A scenario"""
    from pyppiv.models import (
        Generator,
        Link,
        Missingness,
        ScenarioConfig,
        default_coefficients,
    )

    return ScenarioConfig(
        generator=Generator.A,
        n_providers=20,
        n_j=24,
        missingness=Missingness.NONE,
        target_missing_rate=0.4,
        n_reps=3,
        seed=11,
        coefficients=default_coefficients(Generator.A),
        link=Link.LOGIT,
        se_kind="naive",
        cell=0,
    )

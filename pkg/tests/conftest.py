import numpy as np
import pytest

from trafficlab import fixtures


@pytest.fixture(scope="session")
def straight_scenario():
    return fixtures.straight_scenario()


@pytest.fixture(scope="session")
def intersection_graph():
    from trafficlab.lanemap import lane_graph_from_dict

    return lane_graph_from_dict(fixtures.intersection_map())


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)

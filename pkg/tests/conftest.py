import datetime as dt

import numpy as np
import pytest

from empcop import MarginId, StationGeometry
from empcop.synth_io import ScenarioConfig, generate_scenario

STATIONS = ["vienna", "bratislava", "budapest"]
DISTANCES = [[0, 50, 210], [50, 0, 170], [210, 170, 0]]


@pytest.fixture
def margins():
    return tuple(MarginId("t2m", s) for s in STATIONS)


@pytest.fixture
def geometry():
    return StationGeometry.from_matrix(STATIONS, DISTANCES)


@pytest.fixture(scope="session")
def small_archive():
    cfg = ScenarioConfig(STATIONS, DISTANCES, n_days=400, n_members=10, seed=3)
    return generate_scenario(cfg)


def day(s):
    return dt.date.fromisoformat(s)

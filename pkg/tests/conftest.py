"""
Pytest configuration and fixtures for evsched tests
"""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from src.evsched.api.main import app
from src.evsched.core.fleet import ChargingRequest, Fleet
from src.evsched.core.instances import toy_3bus


@pytest.fixture
def client():
    """Create a test client for the FastAPI app"""
    return TestClient(app)


@pytest.fixture
def small_fleet():
    """Three EVs over six slots with overlapping windows"""
    requests = [
        ChargingRequest(id="ev-1", availability=frozenset({1, 2, 3, 4}), rate_cap=2.0, energy_need=5.0),
        ChargingRequest(id="ev-2", availability=frozenset({3, 4, 5, 6}), rate_cap=1.5, energy_need=3.0),
        ChargingRequest(id="ev-3", availability=frozenset({1, 6}), rate_cap=3.0, energy_need=4.0),
    ]
    return Fleet.from_requests(requests, T=6)


@pytest.fixture
def small_base_load():
    """Base load with a valley in the middle of the horizon"""
    return np.array([10.0, 8.0, 5.0, 4.0, 6.0, 9.0])


def random_fleet(seed: int, M: int, T: int, d_range=(500.0, 1000.0)):
    """Random feasible instance: fleet plus base load"""
    rng = np.random.default_rng(seed)
    requests = []
    for m in range(M):
        size = int(rng.integers(2, T + 1))
        slots = frozenset(int(t) for t in rng.choice(np.arange(1, T + 1), size=size, replace=False))
        cap = float(rng.uniform(0.5, 1.5))
        need = float(rng.uniform(0.2, 0.9) * cap * len(slots))
        requests.append(ChargingRequest(id=f"ev-{m}", availability=slots, rate_cap=cap, energy_need=need))
    d = rng.uniform(*d_range, size=T)
    return Fleet.from_requests(requests, T), d


@pytest.fixture
def make_instance():
    """Factory for random network-free instances"""
    return random_fleet


@pytest.fixture(scope="session")
def toy_instance():
    """Three-bus toy feeder with two EVs"""
    return toy_3bus(seed=0)


@pytest.fixture
def toy_inputs(toy_instance):
    """Compiled feeder, p.u. fleet and loads of the toy instance"""
    feeder = toy_instance.feeder
    fleet = toy_instance.fleet.scaled(1.0 / feeder.base_kva)
    d, qd = toy_instance.loads
    return feeder, fleet, d, qd

import pytest

from ha_sim.cluster import Cluster
from ha_sim.engine import SimEngine
from ha_sim.latency import LatencyProfile, load_profile

ROUND_NUMBERS = {
    "detection_delay": 0.5,
    "container_restart": 1.0,
    "pod_create": 1.0,
    "pod_delete": 0.5,
    "node_eviction_timeout": 40.0,
    "node_rejoin": 30.0,
    "endpoint_update": 0.1,
    "env_propagation": 0.2,
    "sc_handling": 0.05,
    "state_restore": 0.3,
    "resume_delay": 0.1,
    "replication_latency": 0.005,
    "checkpoint_interval": 1.0,
    "env_poll_interval": 0.05,
}


@pytest.fixture
def profile() -> LatencyProfile:
    return LatencyProfile().with_overrides(ROUND_NUMBERS)


@pytest.fixture
def engine() -> SimEngine:
    return SimEngine(seed=7)


@pytest.fixture
def cluster(engine, profile) -> Cluster:
    return Cluster(engine, profile)


@pytest.fixture(scope="session")
def table1():
    return load_profile("table1")

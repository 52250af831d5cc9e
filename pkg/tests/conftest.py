import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tns.graph_store import TemporalGraph

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(rng, num_nodes=10, num_edges=200, d_e=3, d_v=2, t_max=100.0, ties=False):
    """Random symmetric event stream; ``ties`` rounds timestamps to force equal times."""
    src = rng.integers(0, num_nodes, size=num_edges)
    dst = (src + rng.integers(1, num_nodes, size=num_edges)) % num_nodes
    ts = np.sort(rng.uniform(0, t_max, size=num_edges))
    if ties:
        ts = np.floor(ts / 5.0) * 5.0
    return TemporalGraph(src, dst, ts, rng.standard_normal((num_edges, d_e)),
                         labels=rng.integers(0, 2, size=num_edges).astype(float),
                         node_features=rng.standard_normal((num_nodes, d_v)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_graph(rng):
    return random_graph(rng)


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])

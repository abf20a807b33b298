import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from offloadnet.graphs import ConnectivityGraph, NodeRole, extend_graph  # noqa: E402
from offloadnet.instances import NetworkInstance, Task  # noqa: E402


def path_instance(roles, service, link_rates):
    """Path 0-1-...-(n-1) with explicit roles and rates."""
    n = len(roles)
    g = ConnectivityGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])
    return NetworkInstance(g, np.array(roles), np.array(link_rates, float), np.array(service, float))


def make_task(source, rate, servers, eta_u=100, eta_d=1):
    return Task(source, rate, eta_u, eta_d, tuple(servers))


@pytest.fixture
def mas_path():
    """Edge node 0 -- relay 1 -- server 2 with equal link rates of 50."""
    E, R, S = NodeRole.EDGE, NodeRole.RELAY, NodeRole.SERVER
    return path_instance([E, R, S], [8.0, 0.0, 100.0], [50.0, 50.0])


@pytest.fixture
def small_ext():
    g = ConnectivityGraph.from_edges(3, [(0, 1), (1, 2)])
    roles = [NodeRole.EDGE, NodeRole.RELAY, NodeRole.SERVER]
    return extend_graph(g, roles, [50.0, 50.0], [8.0, 0.0, 100.0])

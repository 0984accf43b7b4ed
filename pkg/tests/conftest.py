import numpy as np
import pytest

from episource import netgraph
from episource.harness.config import builtin_config


@pytest.fixture(scope="session")
def karate():
    return builtin_config("karate").load_graph()


@pytest.fixture(scope="session")
def dolphin():
    return builtin_config("dolphin").load_graph()


@pytest.fixture
def path3():
    return netgraph.load_edge_list("0 1\n1 2")


@pytest.fixture
def star4():
    return netgraph.load_edge_list("c a\nc b\nc d")  # center index 0


def random_connected_graph(rng: np.random.Generator, n: int,
                           extra_edges: int) -> netgraph.Graph:
    """Random spanning tree plus `extra_edges` random extras."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    tries = 0
    while len(edges) < n - 1 + extra_edges and tries < 200:
        u, v = rng.integers(0, n, size=2)
        tries += 1
        if u == v:
            continue
        edges.add((min(int(u), int(v)), max(int(u), int(v))))
    return netgraph.from_edges(sorted(edges))

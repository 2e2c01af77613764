import numpy as np
import pytest

from gridlocal.cases import four_bus_network, random_radial_network, two_bus_network


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def four_bus():
    return four_bus_network()


@pytest.fixture(scope="session")
def two_bus():
    return two_bus_network(0.05 + 0.02j)


def random_injections(rng, net, scale=0.05):
    """Mixed load/generation per node (pu)."""
    p = rng.uniform(-scale, scale, net.n_nodes)
    q = rng.uniform(-scale / 3, scale / 3, net.n_nodes)
    return p, q


def random_network(seed, n_buses=None, three_phase=True):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9)) if n_buses is None else n_buses
    return random_radial_network(rng, n, three_phase=three_phase)


#: one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from fockqpt import build_hamiltonian, hypercube_free

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def two_state(v=(0.0, 0.0), eta=1.0):
    return build_hamiltonian(2, 1, v, [(0, 1, -eta)])


def path3(v=(0.0, 0.0, 0.0), eta=1.0):
    return build_hamiltonian(3, 1, v, [(0, 1, -eta), (1, 2, -eta)])


def with_potential(H, V):
    """Same links as ``H`` with a new potential."""
    return build_hamiltonian(H.M, H.N, V, list(H.links()))


def cube(N, gamma=1.0, V=None):
    H = hypercube_free(N, gamma)
    return H if V is None else with_potential(H, V)


@st.composite
def connected_models(draw, max_states=9, signs=True):
    """Random connected Hamiltonians: a random spanning tree plus extra links."""
    M = draw(st.integers(2, max_states))
    pairs = {}
    for n in range(1, M):
        parent = draw(st.integers(0, n - 1))
        pairs[(parent, n)] = None
    extra = draw(st.lists(st.tuples(st.integers(0, M - 1), st.integers(0, M - 1)), max_size=M))
    for a, b in extra:
        if a != b:
            pairs[(min(a, b), max(a, b))] = None
    eta = st.floats(0.1, 3.0, allow_nan=False)
    links = []
    for i, j in sorted(pairs):
        sign = draw(st.sampled_from([1.0, -1.0])) if signs else 1.0
        links.append((i, j, -sign * draw(eta)))
    V = draw(st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=M, max_size=M))
    return build_hamiltonian(M, 1, V, links)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddmix import autodiff as ad
from ddmix.graphs import Graph, GraphSpec, generate_graph

settings.register_profile("ddmix", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ddmix")

# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


def numeric_grad(f, param, h=1e-5):
    """Central differences of scalar f() w.r.t. every entry of param.value."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with ad.no_grad():
            up = float(f().value.sum())
        flat[i] = orig - h
        with ad.no_grad():
            down = float(f().value.sum())
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return grad


def analytic_grad(f, params):
    for p in params:
        p.zero_grad()
    ad.backward(f())
    return [p.grad.copy() for p in params]


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


def path_graph(n):
    return Graph(n, frozenset((i, i + 1) for i in range(n - 1)))


def star_graph(leaves):
    return Graph(leaves + 1, frozenset((0, i) for i in range(1, leaves + 1)))


def random_connected_graph(n, seed):
    """Random tree plus a few chords, so every node has a neighbour."""
    rng = np.random.default_rng(seed)
    edges = {(int(rng.integers(i)), i) for i in range(1, n)}
    for _ in range(n // 2):
        a, b = rng.choice(n, 2, replace=False)
        edges.add((int(min(a, b)), int(max(a, b))))
    return Graph(n, frozenset(edges))


@pytest.fixture
def rg_graph():
    return generate_graph(GraphSpec("RG", {"n": 40, "radius": 0.3}, seed=3))

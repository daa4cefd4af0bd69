import numpy as np
import pytest

from jackson_lyapunov.network import JacksonNetwork, solve_traffic, validate_network

NET_A = JacksonNetwork([1, 0], [4, 4], [[0, 1], [0, 0]])
NET_B = JacksonNetwork([1, 1, 1], [9, 9, 9], [[0, 0.25, 0.25], [0.25, 0, 0.25], [0.25, 0.25, 0]])
NET_C = JacksonNetwork([1, 1, 1], [16, 16, 16], [[0, 0.2, 0.3], [0.3, 0, 0.2], [0.2, 0.3, 0]])
NET_D = JacksonNetwork([1], [4], [[0]])
NET_E = JacksonNetwork([3, 0], [2, 4], [[0, 1], [0, 0]])


def random_routing(rng, d, density=0.7, max_row=0.95):
    P = rng.uniform(0, 1, (d, d)) * (rng.random((d, d)) < density)
    np.fill_diagonal(P, 0)
    s = P.sum(axis=1, keepdims=True)
    scale = rng.uniform(0.2, max_row, (d, 1))
    return np.where(s > 0, P / np.where(s > 0, s, 1) * scale, 0.0)


def random_network(rng, d, stable=True, load=(0.25, 0.85)):
    """Random valid network; service rates set so that nu_i / mu_i lies in ``load``."""
    while True:
        lam = rng.uniform(0.1, 2.0, d)
        lam[rng.random(d) < 0.3] = 0.0
        if lam.sum() == 0:
            lam[rng.integers(d)] = 1.0
        P = random_routing(rng, d)
        probe = JacksonNetwork(lam, np.ones(d), P)
        if validate_network(probe).ok:
            break
    nu = solve_traffic(probe).nu
    rho = rng.uniform(*load, d)
    if not stable:
        rho[rng.integers(d)] = rng.uniform(1.05, 2.0)
    return JacksonNetwork(lam, nu / rho, P)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance reporting -------------------------------------------------------------

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    _ACCEPTANCE.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

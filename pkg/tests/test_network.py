import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jackson_lyapunov.network import (
    JacksonNetwork,
    NetworkError,
    NetworkFormatError,
    detect_branching,
    dumps_network,
    loads_network,
    rho_contraction,
    routing_spectral_radius,
    solve_traffic,
    stationary_marginal,
    stationary_probability,
    time_reverse,
    validate_network,
)

from conftest import NET_A, NET_C, NET_E, random_network, random_routing


def fixed_point_traffic(net, iters=5000):
    nu = net.lam.copy()
    for _ in range(iters):
        nu = net.lam + nu @ net.P
    return nu


def neumann_G(P, terms=3000):
    G = np.eye(P.shape[0])
    term = np.eye(P.shape[0])
    for _ in range(terms):
        term = term @ P
        G += term
    return G


def test_net_a_passes_validation():
    assert validate_network(NET_A).ok


def test_net_a_traffic():
    ts = solve_traffic(NET_A)
    np.testing.assert_allclose(ts.nu, [1, 1])
    np.testing.assert_allclose(ts.G, [[1, 1], [0, 1]])
    np.testing.assert_allclose(ts.Q, [[1, 1], [0, 1]])
    assert ts.stable
    assert ts.routing_spectral_radius == 0.0


def test_net_e_is_unstable():
    ts = solve_traffic(NET_E)
    np.testing.assert_allclose(ts.nu, [3, 3])
    assert not ts.stable
    with pytest.raises(NetworkError, match="unstable"):
        stationary_probability(ts, NET_E, [0, 0])


def test_traffic_matches_iteration_oracles(rng):
    for _ in range(20):
        net = random_network(rng, int(rng.integers(1, 6)))
        ts = solve_traffic(net)
        np.testing.assert_allclose(ts.nu, fixed_point_traffic(net), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(ts.G, neumann_G(net.P), rtol=1e-9, atol=1e-12)
        # Q_ji = probability of ever reaching i from j
        assert np.all(ts.Q <= 1 + 1e-12) and np.allclose(np.diag(ts.Q), 1)


@pytest.mark.parametrize(
    "P, condition",
    [
        ([[0.5, 0.2], [0, 0]], "structure"),  # self-loop
        ([[0, 0.7], [0.6, 0.6]], "structure"),  # row sum > 1 and self-loop
        ([[0, 1], [1, 0]], "A1"),  # nobody ever leaves
    ],
)
def test_validation_flags(P, condition):
    report = validate_network(JacksonNetwork([1, 1], [5, 5], P))
    assert not report.ok
    assert condition in report.conditions()


def test_unreachable_queue_violates_a2():
    report = validate_network(JacksonNetwork([1, 0], [5, 5], [[0, 0], [0, 0]]))
    assert report.conditions() == {"A2"}
    assert report.violations[0].index == 1


def test_trapped_queue_is_named():
    net = JacksonNetwork([1, 0, 0], [5, 5, 5], [[0, 0.5, 0], [0, 0, 1], [0, 1, 0]])
    report = validate_network(net)
    assert "A1" in report.conditions()
    assert "never leave" in report.describe()


def test_negative_rates_rejected():
    report = validate_network(JacksonNetwork([-1, 1], [5, 0], [[0, 0], [0, 0]]))
    assert len([v for v in report.violations if v.condition == "structure"]) == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_spectral_radius_matches_eigenvalues(d, seed):
    P = random_routing(np.random.default_rng(seed), d)
    expected = np.max(np.abs(np.linalg.eigvals(P)))
    assert abs(routing_spectral_radius(P) - expected) < 1e-8


def test_spectral_radius_periodic_and_nilpotent():
    assert routing_spectral_radius([[0, 1], [0, 0]]) == 0.0
    assert routing_spectral_radius([[0, 0.5], [0.5, 0]]) == pytest.approx(0.5)
    cyc = [[0, 1, 0], [0, 0, 1], [0.5, 0, 0]]
    assert routing_spectral_radius(cyc) == pytest.approx(0.5 ** (1 / 3))


def test_rho_contraction_examples():
    assert rho_contraction(NET_A.P, [1, 2]) == pytest.approx(0.5)
    assert rho_contraction(NET_C.P, [1, 1, 1]) == pytest.approx(0.5)


def test_rho_contraction_bounds_spectral_radius(rng):
    for _ in range(30):
        P = random_routing(rng, int(rng.integers(1, 6)))
        rho = rng.uniform(0.1, 3, P.shape[0])
        assert rho_contraction(P, rho) >= routing_spectral_radius(P) - 1e-9


def test_time_reverse_tandem():
    rev = time_reverse(NET_A)
    np.testing.assert_allclose(rev.lam, [0, 1])
    np.testing.assert_allclose(rev.mu, [4, 4])
    np.testing.assert_allclose(rev.P, [[0, 0], [1, 0]])
    np.testing.assert_allclose(rev.exit_probabilities, [1, 0])


def test_time_reverse_circle_swaps_p_and_q():
    rev = time_reverse(NET_C)
    np.testing.assert_allclose(rev.P, NET_C.P.T)


def test_time_reverse_is_an_involution_and_keeps_diag_g(rng):
    for _ in range(20):
        net = random_network(rng, int(rng.integers(1, 5)))
        ts = solve_traffic(net)
        rev = time_reverse(net, ts)
        assert validate_network(rev).ok
        tr = solve_traffic(rev)
        np.testing.assert_allclose(tr.nu, ts.nu, rtol=1e-9)
        np.testing.assert_allclose(np.diag(tr.G), np.diag(ts.G), rtol=1e-9)
        assert time_reverse(rev, tr).allclose(net, atol=1e-9)


def test_stationary_probability_examples():
    ts = solve_traffic(NET_A)
    assert stationary_probability(ts, NET_A, [0, 0]) == pytest.approx(0.5625)
    # (1/4)(3/4) * (1/4)^2 (3/4) = 9/1024
    assert stationary_probability(ts, NET_A, [1, 2]) == pytest.approx(9 / 1024)
    assert stationary_marginal(ts, NET_A, 0, 0) == pytest.approx(0.75)


def test_stationary_law_balances_the_generator(rng):
    from jackson_lyapunov.generator import jumps

    net = random_network(rng, 3)
    ts = solve_traffic(net)
    # global balance at interior and boundary states: inflow equals outflow
    for x in [(0, 0, 0), (2, 0, 1), (1, 3, 2)]:
        x = np.array(x)
        out = sum(r for _, r in jumps(net, x)) * stationary_probability(ts, net, x)
        inflow = 0.0
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    y = x + np.array([dx, dy, dz])
                    if np.any(y < 0) or np.all(y == x):
                        continue
                    for z, r in jumps(net, y):
                        if np.array_equal(z, x):
                            inflow += r * stationary_probability(ts, net, y)
        assert inflow == pytest.approx(out, rel=1e-10)


def test_detect_branching():
    assert detect_branching(NET_A.P) == "both"
    assert detect_branching(NET_C.P) == "none"
    tree = [[0, 0.5, 0.3], [0, 0, 0], [0, 0, 0]]
    assert detect_branching(tree) == "branching"
    assert detect_branching(np.array(tree).T) == "transposed_branching"


def test_format_round_trip(rng):
    net = random_network(rng, 4)
    assert loads_network(dumps_network(net)) == net


def test_format_missing_key():
    with pytest.raises(NetworkFormatError, match="missing key 'mu'"):
        loads_network(json.dumps({"lambda": [1], "P": [[0]]}))


def test_format_unknown_key():
    with pytest.raises(NetworkFormatError, match="unknown key"):
        loads_network(json.dumps({"lambda": [1], "mu": [2], "P": [[0]], "extra": 1}))


def test_format_reports_json_position():
    with pytest.raises(NetworkFormatError, match="line 2"):
        loads_network('{"lambda": [1],\n "mu": [2,, "P": [[0]]}')


def test_format_rejects_non_numbers():
    with pytest.raises(NetworkFormatError, match="'mu'"):
        loads_network(json.dumps({"lambda": [1], "mu": ["fast"], "P": [[0]]}))
    with pytest.raises(NetworkFormatError, match="square"):
        loads_network(json.dumps({"lambda": [1, 1], "mu": [2, 2], "P": [[0, 1]]}))

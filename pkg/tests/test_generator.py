import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jackson_lyapunov.generator import (
    ExponentOverflow,
    apply_generator,
    exp_generator_rate,
    exp_generator_rates,
    exponential,
    face_laplace,
    face_set,
    jumps,
    rate_matrix,
    solve_face_system,
)
from jackson_lyapunov.network import solve_traffic

from conftest import NET_A, random_network


def test_total_jump_rate_interior():
    rates = [r for _, r in jumps(NET_A, np.array([2, 3]))]
    assert sum(rates) == pytest.approx(1 + 4 + 4)


def test_no_service_from_empty_queue():
    for y, _ in jumps(NET_A, np.array([0, 0])):
        assert np.all(y >= 0)
    assert [tuple(y) for y, _ in jumps(NET_A, np.array([0, 0]))] == [(1, 0)]


def test_generator_on_constants_is_zero(rng):
    net = random_network(rng, 4)
    for x in [(0, 0, 0, 0), (1, 0, 2, 5)]:
        assert apply_generator(net, lambda z: 3.0, np.array(x)) == 0.0


def test_generator_rejects_bad_states():
    with pytest.raises(ValueError):
        apply_generator(NET_A, lambda z: 1.0, np.array([-1, 0]))
    with pytest.raises(ValueError):
        apply_generator(NET_A, lambda z: 1.0, np.array([1, 0, 0]))


def test_exponential_guards_overflow():
    f = exponential([10.0, 0.0])
    assert f(np.array([1, 0])) == pytest.approx(np.exp(10))
    with pytest.raises(ExponentOverflow):
        f(np.array([100, 0]))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_face_laplace_is_the_exponential_drift(seed):
    """(L e^{alpha.x}) / e^{alpha.x} depends only on the face of x and equals R_face(alpha)."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    net = random_network(rng, d)
    alpha = rng.uniform(-1, 1, d)
    x = rng.integers(0, 3, d) * (rng.random(d) < 0.6)
    lhs = apply_generator(net, exponential(alpha), x) / np.exp(alpha @ x)
    assert lhs == pytest.approx(face_laplace(net, face_set(x), alpha), rel=1e-10, abs=1e-12)


def test_face_system_solves_the_defining_equations(rng):
    for _ in range(20):
        net = random_network(rng, int(rng.integers(2, 5)))
        ts = solve_traffic(net)
        i = int(rng.integers(net.d))
        s = float(rng.uniform(-0.9, 5))
        a = solve_face_system(ts, i, s)
        ea = np.exp(a)
        assert ea[i] == pytest.approx(1 + s)
        p0 = net.exit_probabilities
        for j in range(net.d):
            if j != i:
                assert ea[j] == pytest.approx(net.P[j] @ ea + p0[j], rel=1e-12)


def test_face_system_domain():
    ts = solve_traffic(NET_A)
    with pytest.raises(ValueError):
        solve_face_system(ts, 0, -1.0)


def test_face_system_makes_off_face_drift_vanish(rng):
    """On the face {i} only, R(alpha(s)) reduces to nu-weighted terms of queue i."""
    net = random_network(rng, 3)
    ts = solve_traffic(net)
    for i in range(3):
        s = 0.7
        a = solve_face_system(ts, i, s)
        # the d-1 equations make the contribution of every other busy queue zero
        for j in range(3):
            if j != i:
                single = face_laplace(net, frozenset({j}), a) - face_laplace(net, frozenset(), a)
                assert single == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_closed_form_rate_matches_generator(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    net = random_network(rng, d)
    ts = solve_traffic(net)
    i = int(rng.integers(d))
    g = float(rng.uniform(0.05, 5))
    arrow = np.log1p(ts.Q[:, i] * g)
    x = rng.integers(0, 4, d) * (rng.random(d) < 0.6)
    exact = apply_generator(net, exponential(arrow), x) / np.exp(arrow @ x)
    closed = exp_generator_rate(ts, net, i, g, x)
    assert exact == pytest.approx(closed, rel=1e-9, abs=1e-12)


def test_vectorised_rates_agree(rng):
    net = random_network(rng, 4)
    ts = solve_traffic(net)
    gamma = rng.uniform(0.1, 2, 4)
    x = np.array([0, 2, 0, 1])
    v = exp_generator_rates(ts, net, gamma, x > 0)
    for i in range(4):
        assert v[i] == pytest.approx(exp_generator_rate(ts, net, i, gamma[i], x))


def test_rate_matrix_rows_sum_to_zero():
    states, Q = rate_matrix(NET_A, 3)
    assert states.shape == (16, 2)
    np.testing.assert_allclose(Q.sum(axis=1), 0, atol=1e-12)
    assert np.all(Q - np.diag(np.diag(Q)) >= 0)

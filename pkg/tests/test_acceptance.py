"""One test per acceptance criterion, each printing a PASS/FAIL line in the summary."""
import time

import numpy as np
import pytest

from jackson_lyapunov.bounds import compute_bounds, lower_bound
from jackson_lyapunov.generator import apply_generator, exp_generator_rate, exponential
from jackson_lyapunov.lyapunov import build_h, drift_region, drift_terms, gamma_membership, rho_eps_gamma, rho_eps_limit
from jackson_lyapunov.network import JacksonNetwork, solve_traffic
from jackson_lyapunov.simulation import SimConfig, TargetSet, estimate_stationary, estimate_tail, verify_against_bound
from jackson_lyapunov.special_cases import (
    SymmetricProfile,
    branching_bound,
    circle_bounds,
    circle_G,
    circle_parameters,
    counterexample_network,
    exact_d2,
    sigma,
    symmetric_equality,
    symmetric_membership,
)

from conftest import NET_A, NET_B, NET_C, NET_D, random_network, record_criterion

BAND = 1e-7
MESH = 200


def report(name, ok, detail):
    record_criterion(name, ok, detail)
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def mesh_slack(arrows, n=MESH):
    """min over i and over mesh points v (step 1/n, v^i = 0, sum v = 1) of max_{j != i} (arrows_j - arrows_i).v."""
    d = arrows.shape[0]
    if d == 1:
        return np.inf
    s = np.linspace(0.0, 1.0, n + 1)
    best = np.inf
    for i in range(d):
        others = [k for k in range(d) if k != i]
        if d == 2:
            V = np.zeros((1, d))
            V[0, others[0]] = 1.0
        else:
            V = np.zeros((n + 1, d))
            V[:, others[0]] = s
            V[:, others[1]] = 1.0 - s
        diff = (arrows[others] - arrows[i]) @ V.T
        best = min(best, float(diff.max(axis=0).min()))
    return best


def random_symmetric_network(rng, d):
    p = rng.uniform(0.02, 0.95) / (d - 1)
    P = np.full((d, d), p)
    np.fill_diagonal(P, 0.0)
    lam = rng.uniform(0.1, 2.0, d)
    nu = np.linalg.solve((np.eye(d) - P).T, lam)
    return JacksonNetwork(lam, nu / rng.uniform(0.25, 0.85, d), P)


def test_generator_identity(rng):
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 6))
        net = random_network(rng, d)
        ts = solve_traffic(net)
        i = int(rng.integers(d))
        g = float(rng.uniform(0.05, 5.0))
        arrow = np.log1p(ts.Q[:, i] * g)
        x = rng.integers(0, 5, d) * (rng.random(d) < 0.6)
        f_x = np.exp(arrow @ x)
        exact = apply_generator(net, exponential(arrow), x)
        closed = exp_generator_rate(ts, net, i, g, x) * f_x
        worst = max(worst, abs(exact - closed) / abs(closed))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 1.0
    report("1 generator identity", ok, f"max rel error {worst:.2e} over 200 instances, {elapsed:.2f} s")
    assert ok


def test_drift_limit_on_the_axis_ray():
    start = time.perf_counter()
    ts = solve_traffic(NET_A)
    h = build_h(ts, gamma_membership(ts, [2, 1]), NET_A)
    axis = int(np.argmin(drift_terms(ts, NET_A, [2, 1])))
    ratios = []
    for R in (50, 100, 200):
        x = np.zeros(2, dtype=np.int64)
        x[axis] = R
        ratios.append(apply_generator(NET_A, h, x) / h(x))
    elapsed = time.perf_counter() - start
    err = max(abs(r + 2 / 3) for r in ratios)
    ok = err <= 1e-3 and elapsed < 1.0
    report("2 drift limit along the axis ray", ok,
           f"ratios {[round(float(r), 6) for r in ratios]}, max |ratio + 2/3| {err:.2e}, {elapsed:.2f} s")
    assert ok


def test_membership_oracles():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    mesh_bad = mesh_used = 0
    for _ in range(100):
        d = int(rng.integers(2, 4))
        ts = solve_traffic(random_network(rng, d))
        gamma = np.exp(rng.uniform(np.log(0.05), np.log(20), d))
        cert = gamma_membership(ts, gamma)
        if abs(cert.slack) <= BAND:
            continue
        mesh_used += 1
        mesh_bad += cert.is_member != (mesh_slack(cert.arrows) > 0)
    sigma_bad = sigma_used = 0
    for _ in range(500):
        d = int(rng.integers(3, 6))
        net = random_symmetric_network(rng, d)
        ts = solve_traffic(net)
        prof = SymmetricProfile.from_network(net, ts)
        gamma = np.exp(rng.uniform(np.log(0.05), np.log(20), d))
        cert = gamma_membership(ts, gamma)
        if abs(sigma(prof.q, gamma) - 1) <= BAND or abs(cert.slack) <= BAND:
            continue
        sigma_used += 1
        sigma_bad += cert.is_member != symmetric_membership(prof, gamma)
    elapsed = time.perf_counter() - start
    ok = mesh_bad == 0 and sigma_bad == 0 and elapsed < 30
    report("3 membership oracles", ok,
           f"mesh disagreements {mesh_bad}/{mesh_used}, sigma disagreements {sigma_bad}/{sigma_used}, {elapsed:.2f} s")
    assert ok


def test_closed_form_coherence():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        net = random_network(rng, 2)
        ts = solve_traffic(net)
        vals = [exact_d2(net, ts), branching_bound(net, ts), lower_bound(ts, net)]
        worst = max(worst, max(vals) - min(vals))
    ts = solve_traffic(NET_C)
    p, q = circle_parameters(NET_C.P)
    g_err = float(np.max(np.abs(circle_G(p, q) - ts.G)))
    exact = circle_bounds(NET_C, ts).exact
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and g_err <= 1e-10 and abs(exact + 5.5838) <= 1e-4 and elapsed < 5
    report("4 closed-form coherence", ok,
           f"d=2 spread {worst:.1e}, NET-C G error {g_err:.1e}, NET-C exact {exact:.6f}, {elapsed:.2f} s")
    assert ok


def test_sandwich_and_equality():
    start = time.perf_counter()
    gaps = {}
    for name, net in (("A", NET_A), ("B", NET_B), ("C", NET_C), ("D", NET_D)):
        rep = compute_bounds(net)
        gaps[name] = min(rep.upper_gamma, rep.upper_rho_eps) - rep.lower
    rng = np.random.default_rng(5)
    violations = 0
    for _ in range(30):
        rep = compute_bounds(random_network(rng, int(rng.integers(1, 5))))
        violations += rep.lower > min(rep.upper_gamma, rep.upper_rho_eps) + 1e-9
    elapsed = time.perf_counter() - start
    ok = max(abs(g) for g in gaps.values()) <= 1e-4 and violations == 0 and elapsed < 120
    report("5 sandwich and equality", ok,
           f"upper - lower {', '.join(f'{k} {v:.1e}' for k, v in gaps.items())};"
           f" random violations {violations}/30, {elapsed:.1f} s")
    assert ok


def counterexample_sigma(p, t):
    net = counterexample_network(p, t, [0, 1 / 3, 1 / 3, 1 / 3])
    ts = solve_traffic(net)
    return symmetric_equality(SymmetricProfile.from_network(net, ts), net, ts).sigma_hat


def test_counterexample_exceeds_one():
    start = time.perf_counter()
    s = counterexample_sigma(1e-3, 1e4)
    elapsed = time.perf_counter() - start
    ok = s > 1 and elapsed < 1
    report("6a counterexample sigma > 1", ok, f"sigma at (1e-3, 1e4) = {s:.4f}, {elapsed:.3f} s")
    assert ok


def test_counterexample_approaches_the_limit():
    start = time.perf_counter()
    s = counterexample_sigma(1e-4, 1e6)
    elapsed = time.perf_counter() - start
    rel = abs(s - 1.5) / 1.5
    ok = rel <= 0.05 and elapsed < 1
    report("6b counterexample sigma near 1.5", ok, f"sigma at (1e-4, 1e6) = {s:.4f}, rel gap to 1.5 {rel:.3f}")
    assert ok


def test_stationary_law():
    start = time.perf_counter()
    ts = solve_traffic(NET_A)
    est = estimate_stationary(NET_A, ts, SimConfig(1e5, seed=0), 5)
    dev = est.extra["max_abs_deviation"]
    elapsed = time.perf_counter() - start
    ok = dev < 0.01 and elapsed < 30
    report("7 stationary law", ok, f"max |pi_hat - pi| on [0,5]^2 = {dev:.4f}, {elapsed:.1f} s")
    assert ok


def test_tail_bound():
    start = time.perf_counter()
    ts = solve_traffic(NET_A)
    h = build_h(ts, gamma_membership(ts, [2, 1]), NET_A)
    region = drift_region(ts, NET_A, h, 0.1, 40)
    est = estimate_tail(NET_A, SimConfig(10.0, seed=0, replications=100_000),
                        TargetSet.from_region(region), (8, 8), [1, 2, 5, 10])
    check = verify_against_bound(est, region)
    elapsed = time.perf_counter() - start
    ok = check.passed and elapsed < 120
    report("8 tail bound", ok,
           f"min margin {float(np.min(check.margins)):.4g}, survival {np.round(est.values, 4).tolist()},"
           f" {elapsed:.1f} s")
    assert ok


def test_rho_eps_guarantee():
    rng = np.random.default_rng(9)
    start = time.perf_counter()
    failures = 0
    for _ in range(100):
        net = random_network(rng, int(rng.integers(1, 6)))
        ts = solve_traffic(net)
        # rho = w G has rho (I - P) = w > 0, so rho P < rho componentwise
        rho = rng.uniform(0.1, 1.0, net.d) @ ts.G
        limit = rho_eps_limit(ts, net, rho)
        # acyclic routing contracts to 0 and every eps > 0 lies inside the box
        eps = rng.uniform(0.01, 0.99) * (limit if np.isfinite(limit) else 100.0)
        failures += not rho_eps_gamma(ts, net, rho, eps).is_member
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    report("9 rho/eps guarantee", ok, f"non-members {failures}/100, {elapsed:.2f} s")
    assert ok

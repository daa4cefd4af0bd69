"""Markov generator of a Jackson network and its action on exponentials."""
from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .network import JacksonNetwork, TrafficSolution

#: Largest exponent accepted before exp() would overflow a double.
MAX_EXPONENT = 700.0


class ExponentOverflow(OverflowError):
    pass


def face_set(x) -> frozenset[int]:
    """Indices of the strictly positive coordinates of ``x``."""
    return frozenset(int(i) for i in np.nonzero(np.asarray(x) > 0)[0])


def jumps(net: JacksonNetwork, x) -> Iterator[tuple[np.ndarray, float]]:
    """Yield ``(next_state, rate)`` for every feasible transition out of ``x``."""
    x = np.asarray(x, dtype=np.int64)
    d = net.d
    p0 = net.exit_probabilities
    for i in range(d):
        if net.lam[i] > 0:
            y = x.copy()
            y[i] += 1
            yield y, float(net.lam[i])
    for i in range(d):
        if x[i] == 0:
            continue
        if p0[i] > 0:
            y = x.copy()
            y[i] -= 1
            yield y, float(net.mu[i] * p0[i])
        for j in range(d):
            if j != i and net.P[i, j] > 0:
                y = x.copy()
                y[i] -= 1
                y[j] += 1
                yield y, float(net.mu[i] * net.P[i, j])


def apply_generator(net: JacksonNetwork, f: Callable[[np.ndarray], float], x) -> float:
    """(L f)(x) = sum_z q(x, z) (f(z) - f(x)) over the feasible jumps from ``x``."""
    x = np.asarray(x)
    if x.shape != (net.d,):
        raise ValueError(f"state must have length {net.d}")
    if np.any(x < 0):
        raise ValueError("state has a negative coordinate")
    fx = f(x)
    total = 0.0
    for y, rate in jumps(net, x):
        total += rate * (f(y) - fx)
    return total


def face_laplace(net: JacksonNetwork, face, alpha) -> float:
    """Laplace transform of the jump distribution on the face ``face``."""
    alpha = np.asarray(alpha, dtype=float)
    p0 = net.exit_probabilities
    value = float(np.sum(net.lam * np.expm1(alpha)))
    ea = np.exp(alpha)
    for j in face:
        inner = (net.P[j] @ ea + p0[j]) * np.exp(-alpha[j]) - 1.0
        value += net.mu[j] * inner
    return value


def exponential(alpha) -> Callable[[np.ndarray], float]:
    """f(x) = exp(alpha . x), refusing exponents that would overflow."""
    alpha = np.asarray(alpha, dtype=float)

    def f(x):
        e = float(alpha @ np.asarray(x, dtype=float))
        if e > MAX_EXPONENT:
            raise ExponentOverflow(f"exponent {e:.1f} exceeds {MAX_EXPONENT}")
        return np.exp(e)

    return f


def solve_face_system(ts: TrafficSolution, i: int, s: float) -> np.ndarray:
    """Solution alpha(s) of exp(alpha_i) = 1 + s, exp(alpha_j) = sum_k p_jk exp(alpha_k) + p_j0."""
    if s <= -1:
        raise ValueError("s must be > -1")
    return np.log1p(ts.Q[:, i] * s)


def exp_generator_rate(ts: TrafficSolution, net: JacksonNetwork, i: int, gamma_i: float, x) -> float:
    """Closed-form (L f_i)(x) / f_i(x) for f_i(x) = exp(gamma_vec_i . x)."""
    if gamma_i < 0:
        raise ValueError("gamma_i must be nonnegative")
    busy = np.asarray(x)[i] > 0
    g = ts.G[i, i]
    rate = ts.nu[i]
    if busy:
        rate = rate - net.mu[i] / (1.0 + gamma_i)
    return gamma_i / g * rate


def exp_generator_rates(ts: TrafficSolution, net: JacksonNetwork, gamma, busy) -> np.ndarray:
    """Vectorised version over queues: ``busy`` has shape (..., d) of booleans."""
    gamma = np.asarray(gamma, dtype=float)
    g = np.diag(ts.G)
    idle = gamma / g * ts.nu
    on = gamma / g * (ts.nu - net.mu / (1.0 + gamma))
    return np.where(busy, on, idle)


def rate_matrix(net: JacksonNetwork, cap: int):
    """Generator restricted to the box [0, cap]^d, jumps leaving the box dropped.

    Returns ``(states, Qmat)`` with ``Qmat`` dense; off-diagonal entries are
    the jump rates and the diagonal makes every row sum to zero.
    """
    d = net.d
    grids = np.meshgrid(*[np.arange(cap + 1)] * d, indexing="ij")
    states = np.stack([g.ravel() for g in grids], axis=1)
    index = {tuple(s): k for k, s in enumerate(states)}
    n = len(states)
    Qm = np.zeros((n, n))
    for k, s in enumerate(states):
        for y, rate in jumps(net, s):
            m = index.get(tuple(y))
            if m is not None:
                Qm[k, m] += rate
        Qm[k, k] = -Qm[k].sum()
    return states, Qm

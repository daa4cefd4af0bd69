"""Closed forms for log r_e* in special network families.

Covered: a single queue, two queues, branching routing (for P or its
transpose), fully symmetric routing and the three-node circle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .bounds import lower_bound
from .network import (
    JacksonNetwork,
    NetworkError,
    TrafficSolution,
    detect_branching,
    require_stable,
    solve_traffic,
)

PATTERN_TOL = 1e-12
SIGMA_TOL = 1e-12


class PatternError(NetworkError):
    """The routing matrix does not have the structure a formula needs."""


def _sq_gaps(mu, nu) -> np.ndarray:
    return (np.sqrt(mu) - np.sqrt(nu)) ** 2


def exact_d1(net: JacksonNetwork) -> float:
    if net.d != 1:
        raise PatternError("exact_d1 needs a single queue")
    if not net.lam[0] < net.mu[0]:
        raise NetworkError("single queue is unstable")
    return -float(_sq_gaps(net.mu[0], net.lam[0]))


def exact_d2(net: JacksonNetwork, ts: TrafficSolution) -> float:
    if net.d != 2:
        raise PatternError("exact_d2 needs two queues")
    require_stable(net, ts)
    factor = 1.0 - net.P[0, 1] * net.P[1, 0]
    return -float(factor * np.min(_sq_gaps(net.mu, ts.nu)))


def branching_bound(net: JacksonNetwork, ts: TrafficSolution) -> float | None:
    """Exact value when P or its transpose has a branching structure, else None.

    The transposed case relies on time reversal, which leaves both the
    value and the diagonal of G unchanged, so the formula uses the
    original network's G either way.
    """
    require_stable(net, ts)
    if detect_branching(net.P) == "none":
        return None
    return lower_bound(ts, net)


# -- fully symmetric routing --------------------------------------------------

def symmetric_p(P, tol: float = PATTERN_TOL) -> float | None:
    """Common off-diagonal entry when P[i, j] = p for all i != j, else None."""
    P = np.asarray(P, dtype=float)
    d = P.shape[0]
    if d < 2:
        return None
    off = P[~np.eye(d, dtype=bool)]
    p = float(off[0])
    if np.all(np.abs(off - p) <= tol) and 0 < p < 1.0 / (d - 1):
        return p
    return None


def sigma(q: float, gamma) -> float:
    """sum_j (max_i log(1 + q g_i) - log(1 + q g_j)) / (log(1 + g_j) - log(1 + q g_j))."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("sigma needs strictly positive components")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    lq = np.log1p(q * gamma)
    return float(np.sum((lq.max() - lq) / (np.log1p(gamma) - lq)))


@dataclass(frozen=True)
class SymmetricProfile:
    d: int
    p: float
    q: float
    g_diag: float
    m: float
    a: np.ndarray
    b: np.ndarray
    a_hat: float
    gamma_hat: np.ndarray

    @classmethod
    def from_network(cls, net: JacksonNetwork, ts: TrafficSolution | None = None) -> "SymmetricProfile":
        p = symmetric_p(net.P)
        if p is None:
            raise PatternError("routing matrix is not fully symmetric")
        if ts is None:
            ts = solve_traffic(net)
        require_stable(net, ts)
        from .bounds import interval_roots

        d = net.d
        q = p / (1 - (d - 2) * p)
        g_diag = 1.0 / (1 - (d - 1) * p ** 2 / (1 - (d - 2) * p))
        gaps = _sq_gaps(net.mu, ts.nu)
        m = float(gaps.min())
        roots = [interval_roots(net.mu[i], ts.nu[i], m) for i in range(d)]
        a = np.array([r[0] for r in roots])
        b = np.array([r[1] for r in roots])
        a_hat = float(a.max())
        return cls(d, p, q, g_diag, m, a, b, a_hat, np.minimum(b, a_hat))


def symmetric_membership(profile: SymmetricProfile, gamma) -> bool:
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        return False
    return sigma(profile.q, gamma) < 1.0


@dataclass(frozen=True)
class SymmetricEquality:
    holds: bool
    gamma_hat: np.ndarray
    sigma_hat: float
    exact: float | None
    cond_ratio: bool  # mu_i / nu_i all equal
    cond_dominant: bool  # one queue has the smallest mu and largest nu
    cond_level: bool  # the i0 conditions on the square-root gaps


def _i0_conditions(mu, nu, tol=1e-12) -> bool:
    gaps = np.sqrt(mu) - np.sqrt(nu)
    for i0 in np.nonzero(gaps <= gaps.min() + tol * max(1.0, abs(gaps.min())))[0]:
        lhs = np.min(mu / np.sqrt(mu[i0]) - nu / np.sqrt(nu[i0]))
        if abs(lhs - gaps[i0]) <= tol * max(1.0, abs(gaps[i0])):
            return True
    return False


def shortcut_conditions(mu, nu, tol: float = 1e-12) -> tuple[bool, bool, bool]:
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    r = mu / nu
    ratio = bool(np.all(np.abs(r - r[0]) <= tol * r[0]))
    dominant = any(np.all(mu >= mu[i0] - tol) and np.all(nu <= nu[i0] + tol) for i0 in range(len(mu)))
    return ratio, bool(dominant), _i0_conditions(mu, nu, tol)


def symmetric_equality(
    profile: SymmetricProfile, net: JacksonNetwork, ts: TrafficSolution
) -> SymmetricEquality:
    s = sigma(profile.q, profile.gamma_hat)
    holds = s <= 1.0 + SIGMA_TOL
    ratio, dominant, level = shortcut_conditions(net.mu, ts.nu)
    exact = -profile.m / profile.g_diag if holds else None
    return SymmetricEquality(holds, profile.gamma_hat, s, exact, ratio, dominant, level)


def equal_component_sup(net: JacksonNetwork, ts: TrafficSolution) -> tuple[float, float]:
    """sup over t > 0 of min_i t (mu_i / (1 + t) - nu_i), with its maximiser.

    Each term is concave in t, so their minimum is too and a bounded scalar
    search finds the global maximum.
    """
    require_stable(net, ts)
    hi = float(np.min(net.mu / ts.nu - 1.0))

    def neg(t):
        return -float(np.min(t * (net.mu / (1.0 + t) - ts.nu)))

    res = minimize_scalar(neg, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12})
    return -float(res.fun), float(res.x)


# -- three nodes on a circle ----------------------------------------------------

def circle_parameters(P, tol: float = PATTERN_TOL) -> tuple[float, float] | None:
    """(p, q) when P = [[0, p, q], [q, 0, p], [p, q, 0]], else None."""
    P = np.asarray(P, dtype=float)
    if P.shape != (3, 3) or np.any(np.abs(np.diag(P)) > tol):
        return None
    p, q = P[0, 1], P[0, 2]
    expected = np.array([[0, p, q], [q, 0, p], [p, q, 0]])
    if np.all(np.abs(P - expected) <= tol) and p > 0 and q > 0 and p + q < 1:
        return float(p), float(q)
    return None


def circle_G(p: float, q: float) -> np.ndarray:
    det = 1 - p ** 3 - q ** 3 - 3 * p * q
    a, b, c = 1 - p * q, q * q + p, p * p + q
    return np.array([[a, b, c], [c, a, b], [b, c, a]]) / det


@dataclass(frozen=True)
class CircleBounds:
    p: float
    q: float
    factor: float
    lower: float
    upper: float
    exact: float | None
    G_closed: np.ndarray
    G_error: float


def circle_bounds(
    net: JacksonNetwork, ts: TrafficSolution, allow_unordered: bool = False
) -> CircleBounds:
    params = circle_parameters(net.P)
    if params is None:
        raise PatternError("routing matrix is not a three-node circle")
    p, q = params
    if not p < q and not allow_unordered:
        raise PatternError(f"circle formula needs p < q (got p={p}, q={q})")
    require_stable(net, ts)
    factor = (1 - p ** 3 - q ** 3 - 3 * p * q) / (1 - p * q)
    Gc = circle_G(p, q)
    lower = -factor * float(np.min(_sq_gaps(net.mu, ts.nu)))
    sup, _ = equal_component_sup(net, ts)
    upper = -factor * sup
    exact = lower if _i0_conditions(net.mu, ts.nu) else None
    return CircleBounds(p, q, factor, lower, upper, exact, Gc, float(np.max(np.abs(Gc - ts.G))))


# -- families used to show the lower bound is not always attained ----------------

def counterexample_network(p: float, t: float, lam, d: int = 4) -> JacksonNetwork:
    """Symmetric routing with sqrt(mu_i) - sqrt(nu_i) = t for every queue."""
    lam = np.asarray(lam, dtype=float)
    P = np.full((d, d), p)
    np.fill_diagonal(P, 0.0)
    nu = np.linalg.solve((np.eye(d) - P).T, lam)
    mu = (t + np.sqrt(nu)) ** 2
    return JacksonNetwork(lam, mu, P)


# -- dispatch -----------------------------------------------------------------

def closed_forms(net: JacksonNetwork, ts: TrafficSolution) -> dict[str, float]:
    """Every closed form that applies, most specific first."""
    require_stable(net, ts)
    out: dict[str, float] = {}
    if net.d == 1:
        out["d1"] = exact_d1(net)
    br = branching_bound(net, ts)
    if br is not None:
        out["branching"] = br
    if symmetric_p(net.P) is not None:
        se = symmetric_equality(SymmetricProfile.from_network(net, ts), net, ts)
        if se.holds:
            out["symmetric"] = se.exact
    params = circle_parameters(net.P)
    if params is not None and params[0] < params[1]:
        cb = circle_bounds(net, ts)
        if cb.exact is not None:
            out["circle"] = cb.exact
    if net.d == 2:
        out["d2"] = exact_d2(net, ts)
    return out

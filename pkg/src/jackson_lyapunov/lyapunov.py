"""Explicit multiplicative Lyapunov functions h_gamma(x) = sum_i exp(gamma_vec_i . x).

The vectors ``gamma_vec_i`` have components ``log(1 + Q[j, i] gamma_i)``;
row ``i`` of the *arrows* matrix is ``gamma_vec_i``. Membership of ``gamma``
in the admissible set is decided per index ``i`` by a small matrix game
(see :func:`gamma_membership`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import brentq

from .lp import solve_game
from .network import JacksonNetwork, NetworkError, TrafficSolution, rho_contraction

#: Game values within this distance of zero are reported as ``boundary``.
STRICT_TOL = 1e-9
MAX_BOX_STATES = 5_000_000

MEMBER = "member"
BOUNDARY = "boundary"
NON_MEMBER = "non_member"


def gamma_arrows(ts: TrafficSolution, gamma) -> np.ndarray:
    """arrows[i, j] = log(1 + Q[j, i] * gamma[i])."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    return np.log1p(ts.Q.T * gamma[:, np.newaxis])


@dataclass(frozen=True)
class GammaCertificate:
    gamma: np.ndarray
    arrows: np.ndarray
    verdict: str
    slack: float
    slacks: np.ndarray
    thetas: np.ndarray  # thetas[i] is the simplex witness for index i
    directions: np.ndarray  # directions[i] minimises max_j (arrows[j]-arrows[i]).v
    worst_index: int

    @property
    def is_member(self) -> bool:
        return self.verdict == MEMBER

    @property
    def in_closure(self) -> bool:
        return self.verdict in (MEMBER, BOUNDARY)

    @property
    def violating_direction(self) -> tuple[int, np.ndarray] | None:
        if self.verdict == MEMBER:
            return None
        return self.worst_index, self.directions[self.worst_index]

    def to_dict(self) -> dict[str, Any]:
        out = {
            "gamma": self.gamma.tolist(),
            "verdict": self.verdict,
            "slack": float(self.slack) if np.isfinite(self.slack) else None,
        }
        if self.verdict == MEMBER:
            out["witnesses"] = self.thetas.tolist()
        else:
            i, v = self.violating_direction
            out["violating_index"] = i
            out["violating_direction"] = v.tolist()
        return out


def gamma_membership(ts: TrafficSolution, gamma, tol: float = STRICT_TOL) -> GammaCertificate:
    """Decide whether ``gamma`` lies in the admissible set.

    For each index ``i`` solve ``max_theta min_{k != i} sum_j theta_j
    (arrows[j, k] - arrows[i, k])`` with ``theta`` on the simplex of
    ``{j != i}``. The minimum of these game values over ``i`` is the slack:
    positive means member, zero (within ``tol``) boundary, negative
    non-member. The opposing mixture is the violating direction ``v``.
    """
    gamma = np.asarray(gamma, dtype=float)
    arrows = gamma_arrows(ts, gamma)
    d = gamma.shape[0]
    thetas = np.zeros((d, d))
    directions = np.zeros((d, d))
    slacks = np.full(d, np.inf)
    if d > 1:
        for i in range(d):
            others = [j for j in range(d) if j != i]
            # rows k, columns j
            M = arrows[np.ix_(others, others)].T - arrows[i, others][:, np.newaxis]
            sol = solve_game(M)
            slacks[i] = sol.value
            thetas[i, others] = sol.theta
            directions[i, others] = sol.v
    worst = int(np.argmin(slacks))
    slack = float(slacks[worst])
    if slack > tol:
        verdict = MEMBER
    elif slack >= -tol:
        verdict = BOUNDARY
    else:
        verdict = NON_MEMBER
    return GammaCertificate(gamma, arrows, verdict, slack, slacks, thetas, directions, worst)


def axis_check(arrows: np.ndarray) -> bool:
    """Necessary condition for membership: the defining inequality on unit vectors."""
    d = arrows.shape[0]
    for i in range(d):
        for k in range(d):
            if k != i and not arrows[i, k] < arrows[:, k].max():
                return False
    return True


def x_rho(r: float) -> float:
    """Largest x with log(1 + x) >= r x; +inf when r == 0."""
    if not 0 <= r < 1:
        raise ValueError("contraction factor must lie in [0, 1)")
    if r == 0:
        return np.inf

    def f(x):
        return np.log1p(x) - r * x

    # f(x) ~ x(1 - r) - x^2/2 near zero, so this point sits left of the root
    lo = 1e-3 * (1.0 - r)
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    return float(brentq(f, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps))


def _check_rho(net: JacksonNetwork, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (net.d,) or np.any(rho <= 0):
        raise NetworkError("rho must be a strictly positive vector of length d")
    if np.any(rho @ net.P >= rho):
        raise NetworkError("rho must satisfy (rho P)_i < rho_i for every i")
    return rho


def rho_eps_limit(ts: TrafficSolution, net: JacksonNetwork, rho) -> float:
    """Upper end of the eps range for which eps G_ii / rho_i is guaranteed admissible."""
    rho = _check_rho(net, rho)
    xr = x_rho(rho_contraction(net.P, rho))
    return float(np.min(rho / np.diag(ts.G)) * xr)


def eps_box(ts: TrafficSolution, net: JacksonNetwork, rho) -> float:
    """Upper end of the eps range that also keeps every drift term negative."""
    rho = _check_rho(net, rho)
    scale = rho / np.diag(ts.G)
    return float(min(rho_eps_limit(ts, net, rho), np.min(scale * (net.mu / ts.nu - 1))))


def gamma_from_rho_eps(ts: TrafficSolution, rho, eps: float) -> np.ndarray:
    return eps * np.diag(ts.G) / np.asarray(rho, dtype=float)


def rho_eps_gamma(ts: TrafficSolution, net: JacksonNetwork, rho, eps: float) -> GammaCertificate:
    """Certificate for gamma_i = eps G_ii / rho_i."""
    rho = _check_rho(net, rho)
    if eps <= 0:
        raise ValueError("eps must be positive")
    return gamma_membership(ts, gamma_from_rho_eps(ts, rho, eps))


def drift_terms(ts: TrafficSolution, net: JacksonNetwork, gamma) -> np.ndarray:
    """gamma_i / G_ii * (mu_i / (1 + gamma_i) - nu_i) for each i."""
    gamma = np.asarray(gamma, dtype=float)
    return gamma / np.diag(ts.G) * (net.mu / (1.0 + gamma) - ts.nu)


@dataclass(frozen=True)
class LyapunovFunction:
    gamma: np.ndarray
    arrows: np.ndarray
    theta_h: float
    rates_busy: np.ndarray
    rates_idle: np.ndarray
    provenance: dict = field(default_factory=lambda: {"kind": "direct_gamma"})

    @property
    def is_multiplicative(self) -> bool:
        return self.theta_h > 0

    def exponents(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.arrows.T

    def log_value(self, x) -> np.ndarray:
        e = self.exponents(x)
        m = e.max(axis=-1)
        return m + np.log(np.exp(e - m[..., np.newaxis]).sum(axis=-1))

    def __call__(self, x):
        return np.exp(self.log_value(x))

    def drift_ratio(self, x) -> np.ndarray:
        """Exact (L h)(x) / h(x), summing the per-term closed forms."""
        x = np.asarray(x)
        e = self.exponents(x)
        w = np.exp(e - e.max(axis=-1)[..., np.newaxis])
        busy = x > 0
        rates = np.where(busy, self.rates_busy, self.rates_idle)
        return (rates * w).sum(axis=-1) / w.sum(axis=-1)

    def product_form(self, x, ts: TrafficSolution) -> np.ndarray:
        """sum_i prod_j (1 + eps G_ji / rho_i)^x_j, for the rho/eps construction."""
        if self.provenance.get("kind") != "rho_eps":
            raise ValueError("product form only exists for the rho/eps construction")
        rho = np.asarray(self.provenance["rho"])
        eps = self.provenance["eps"]
        x = np.asarray(x, dtype=float)
        base = 1.0 + eps * ts.G / rho[np.newaxis, :]  # base[j, i]
        return np.prod(base[np.newaxis, :, :] ** x[..., :, np.newaxis], axis=-2).sum(axis=-1)


def build_h(
    ts: TrafficSolution,
    cert: GammaCertificate,
    net: JacksonNetwork,
    provenance: dict | None = None,
) -> LyapunovFunction:
    if not cert.is_member:
        raise ValueError(f"gamma is not admissible (verdict {cert.verdict})")
    g = np.diag(ts.G)
    gamma = cert.gamma
    busy = gamma / g * (ts.nu - net.mu / (1.0 + gamma))
    idle = gamma / g * ts.nu
    theta_h = float(np.min(drift_terms(ts, net, gamma)))
    return LyapunovFunction(
        gamma=gamma,
        arrows=cert.arrows,
        theta_h=theta_h,
        rates_busy=busy,
        rates_idle=idle,
        provenance=provenance or {"kind": "direct_gamma"},
    )


def build_h_rho_eps(ts: TrafficSolution, net: JacksonNetwork, rho, eps: float) -> LyapunovFunction:
    cert = rho_eps_gamma(ts, net, rho, eps)
    prov = {"kind": "rho_eps", "rho": np.asarray(rho, dtype=float).tolist(), "eps": float(eps)}
    return build_h(ts, cert, net, provenance=prov)


def box_states(d: int, cap: int) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(cap + 1)] * d, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class DriftRegion:
    """States of the box [0, cap]^d where L h > -theta h, with the tail-bound constant.

    ``c_E`` is the minimum of ``h`` over the box outside ``E``. Because ``h``
    is coordinatewise nondecreasing, it bounds ``h`` from below on the whole
    complement of ``E`` as long as no shell state of the box lies in ``E``
    (``boundary_clean``); otherwise enlarge ``cap``.
    """

    h: LyapunovFunction
    theta: float
    cap: int
    mask: np.ndarray  # shape (cap+1,)*d
    c_E: float
    boundary_clean: bool

    @property
    def states(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def __len__(self) -> int:
        return int(self.mask.sum())

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X)
        inside = np.all((X >= 0) & (X <= self.cap), axis=-1)
        out = np.zeros(X.shape[:-1], dtype=bool)
        idx = X[inside]
        out[inside] = self.mask[tuple(idx.T)]
        return out

    def tail_bound(self, x, t) -> np.ndarray:
        """h(x) exp(-theta t) / c_E, an upper bound on P_x(tau_E > t)."""
        return self.h(x) * np.exp(-self.theta * np.asarray(t, dtype=float)) / self.c_E


def drift_region(
    ts: TrafficSolution, net: JacksonNetwork, h: LyapunovFunction, theta: float, box_cap: int
) -> DriftRegion:
    if not 0 < theta < h.theta_h:
        raise ValueError(f"theta must lie in (0, theta_h={h.theta_h:.6g})")
    if box_cap < 1:
        raise ValueError("box_cap must be >= 1")
    d = net.d
    if (box_cap + 1) ** d > MAX_BOX_STATES:
        raise ValueError("box too large")
    states = box_states(d, box_cap)
    ratio = h.drift_ratio(states)
    in_E = ratio > -theta
    shell = np.any(states == box_cap, axis=1)
    outside = ~in_E
    if not outside.any():
        raise ValueError("every state of the box is in E; enlarge box_cap")
    c_E = float(np.min(h(states[outside])))
    mask = in_E.reshape((box_cap + 1,) * d)
    return DriftRegion(h, float(theta), int(box_cap), mask, c_E, bool(not np.any(in_E & shell)))

"""Lower and upper bounds on log r_e*, the log essential spectral radius.

``lower_bound`` is the explicit expression ``-min_i (sqrt(mu_i) - sqrt(nu_i))^2 / G_ii``.
Upper bounds come from admissible gamma vectors: any gamma in the closure
of the admissible set gives ``log r_e* <= -objective(gamma)``. Two searches
are offered, one directly over gamma and one over the (rho, eps)
parametrisation whose points are admissible by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax

from .lyapunov import (
    STRICT_TOL,
    drift_terms,
    eps_box,
    gamma_from_rho_eps,
    gamma_membership,
)
from .network import JacksonNetwork, NetworkError, TrafficSolution, require_stable, solve_traffic

DEFAULT_BUDGET = 5000
DEFAULT_STARTS = 8
PEAK_RTOL = 1e-10


class BoundsError(RuntimeError):
    pass


def objective(ts: TrafficSolution, net: JacksonNetwork, gamma) -> float:
    """min_i gamma_i / G_ii * (mu_i / (1 + gamma_i) - nu_i)."""
    return float(np.min(drift_terms(ts, net, gamma)))


def gamma_star(ts: TrafficSolution, net: JacksonNetwork) -> np.ndarray:
    """Per-queue maximisers sqrt(mu_i / nu_i) - 1 of the drift terms."""
    return np.sqrt(net.mu / ts.nu) - 1.0


def _peak_terms(ts: TrafficSolution, net: JacksonNetwork) -> np.ndarray:
    return (np.sqrt(net.mu) - np.sqrt(ts.nu)) ** 2 / np.diag(ts.G)


def lower_bound(ts: TrafficSolution, net: JacksonNetwork) -> float:
    require_stable(net, ts)
    return -float(np.min(_peak_terms(ts, net)))


@dataclass(frozen=True)
class GammaSearchResult:
    value: float  # upper bound on log r_e*
    gamma: np.ndarray
    verdict: str
    evaluations: int


@dataclass(frozen=True)
class RhoEpsSearchResult:
    value: float
    rho: np.ndarray
    eps: float
    evaluations: int
    gamma: np.ndarray


def rho_eps_value(ts: TrafficSolution, net: JacksonNetwork, rho, eps: float) -> float:
    """eps * min_i (mu_i / (rho_i + eps G_ii) - nu_i / rho_i)."""
    rho = np.asarray(rho, dtype=float)
    g = np.diag(ts.G)
    return float(eps * np.min(net.mu / (rho + eps * g) - ts.nu / rho))


def upper_bound_rho_eps(
    ts: TrafficSolution,
    net: JacksonNetwork,
    budget: int = DEFAULT_BUDGET,
    starts: int = DEFAULT_STARTS,
    seed: int = 0,
) -> RhoEpsSearchResult:
    """Best bound over rho = beta G (beta in the open simplex) and eps in its box."""
    require_stable(net, ts)
    d = net.d
    G = ts.G
    rng = np.random.default_rng(seed)
    evals = 0

    def unpack(z):
        beta = softmax(z[:d])
        rho = beta @ G
        eps = eps_box(ts, net, rho) * expit(z[d])
        return rho, eps

    def f(z):
        nonlocal evals
        evals += 1
        rho, eps = unpack(z)
        return -rho_eps_value(ts, net, rho, eps)

    x0s = [np.zeros(d + 1)]
    # start whose gamma is closest to the per-queue maximisers
    target = np.diag(G) / np.maximum(gamma_star(ts, net), 1e-12)
    beta = target - target @ net.P
    if np.all(beta > 0):
        x0s.append(np.r_[np.log(beta / beta.sum()), 2.0])
    while len(x0s) < starts:
        x0s.append(rng.normal(size=d + 1))

    per_start = max(budget // len(x0s), 10)
    best_val, best_z = np.inf, x0s[0]
    for x0 in x0s:
        res = minimize(
            f, x0, method="Nelder-Mead",
            options={"maxfev": per_start, "xatol": 1e-10, "fatol": 1e-13},
        )
        if res.fun < best_val:
            best_val, best_z = res.fun, res.x
    rho, eps = unpack(best_z)
    return RhoEpsSearchResult(
        value=float(best_val), rho=rho, eps=float(eps), evaluations=evals,
        gamma=gamma_from_rho_eps(ts, rho, eps),
    )


def _rho_eps_seeds(ts, net, rng, count):
    d = net.d
    seeds = []
    for k in range(count):
        beta = np.full(d, 1.0 / d) if k == 0 else rng.dirichlet(np.ones(d))
        rho = beta @ ts.G
        eps = 0.5 * eps_box(ts, net, rho)
        seeds.append(gamma_from_rho_eps(ts, rho, eps))
    return seeds


def upper_bound_gamma(
    ts: TrafficSolution,
    net: JacksonNetwork,
    budget: int = DEFAULT_BUDGET,
    starts: int = DEFAULT_STARTS,
    seed: int = 0,
    extra_seeds: Sequence[np.ndarray] = (),
) -> GammaSearchResult:
    """Maximise the objective over gamma in the closure of the admissible set.

    Multi-start Nelder-Mead; an infeasible iterate is pulled back toward the
    best feasible point found so far by repeated halving, so every value
    reported comes from a certified member-or-boundary gamma.
    """
    require_stable(net, ts)
    d = net.d
    rng = np.random.default_rng(seed)
    ceiling = float(np.min(_peak_terms(ts, net)))
    evals = 0
    cache: dict[bytes, bool] = {}

    def feasible(g) -> bool:
        nonlocal evals
        key = g.tobytes()
        if key not in cache:
            evals += 1
            cache[key] = gamma_membership(ts, g).in_closure
        return cache[key]

    gs = gamma_star(ts, net)
    candidates = [gs]
    for t in (gs.min(), gs.mean(), gs.max()):
        candidates.append(np.full(d, t))
    candidates.extend(np.asarray(s, dtype=float) for s in extra_seeds)
    candidates.extend(_rho_eps_seeds(ts, net, rng, max(starts, 2)))

    feasible_seeds = []
    for c in candidates:
        c = np.maximum(c, 0.0)
        if feasible(c):
            feasible_seeds.append((objective(ts, net, c), c))
    if not feasible_seeds:
        raise BoundsError("no admissible starting point found")
    feasible_seeds.sort(key=lambda p: -p[0])
    best_val, best = feasible_seeds[0]
    best = best.copy()

    class _Done(Exception):
        pass

    def f(g):
        nonlocal best_val, best
        g = np.maximum(g, 0.0)
        point = None
        if feasible(g):
            point = g
        else:
            for k in range(1, 31):
                trial = best + (g - best) * 0.5 ** k
                if feasible(trial):
                    point = trial
                    break
        if point is None:
            return -best_val
        val = objective(ts, net, point)
        if val > best_val:
            best_val, best = val, point.copy()
        if best_val >= ceiling - 1e-13 or evals >= budget:
            raise _Done
        return -val

    if best_val < ceiling - 1e-13:
        for _, x0 in feasible_seeds[:starts]:
            if evals >= budget:
                break
            try:
                minimize(
                    f, x0, method="Nelder-Mead",
                    options={"maxfev": max(budget // starts, 20), "xatol": 1e-10, "fatol": 1e-13},
                )
            except _Done:
                break
    verdict = gamma_membership(ts, best).verdict
    return GammaSearchResult(value=-float(best_val), gamma=best, verdict=verdict, evaluations=evals)


@dataclass(frozen=True)
class DeltaInterval:
    i: int
    a: float
    b: float
    contains_gamma_star: bool

    def to_dict(self) -> dict[str, Any]:
        return {"i": self.i, "a": self.a, "b": self.b, "contains_gamma_star": self.contains_gamma_star}


def interval_roots(mu: float, nu: float, m: float) -> tuple[float, float]:
    """Endpoints of {t >= 0 : t (mu / (1 + t) - nu) >= m} for 0 < m <= (sqrt(mu) - sqrt(nu))^2."""
    # (mu + nu - m)^2 - 4 mu nu factored, so a level at the peak cancels cleanly
    root_mu, root_nu = np.sqrt(mu), np.sqrt(nu)
    peak = (root_mu - root_nu) ** 2
    below = peak - m
    if below < 0:
        if below < -PEAK_RTOL * max(1.0, peak):
            raise BoundsError("level above the peak of the drift term")
        below = 0.0
    elif below <= PEAK_RTOL * max(1.0, peak):
        below = 0.0
    disc = below * ((root_mu + root_nu) ** 2 - m)
    # roots of nu t^2 - (mu - nu - m) t + m = 0, the small one through a b = m / nu
    linear = below + 2.0 * root_nu * (root_mu - root_nu)
    b = (linear + np.sqrt(disc)) / (2 * nu)
    return min(m / (nu * b), b), b


def delta_intervals(ts: TrafficSolution, net: JacksonNetwork) -> list[DeltaInterval]:
    """Sets of gamma_i whose drift term reaches the lower-bound level."""
    require_stable(net, ts)
    level = float(np.min(_peak_terms(ts, net)))
    gs = gamma_star(ts, net)
    g = np.diag(ts.G)
    out = []
    for i in range(net.d):
        a, b = interval_roots(net.mu[i], ts.nu[i], level * g[i])
        out.append(DeltaInterval(i, float(a), float(b), bool(a - 1e-9 <= gs[i] <= b + 1e-9)))
    return out


@dataclass(frozen=True)
class EqualityDiagnostic:
    equality: bool
    intervals: list[DeltaInterval]
    witness: np.ndarray | None
    slack: float


def equality_diagnostic(
    ts: TrafficSolution, net: JacksonNetwork, budget: int = 500, tol: float = STRICT_TOL
) -> EqualityDiagnostic:
    """Search the box of intervals for a gamma in the closure of the admissible set.

    ``equality=True`` proves the lower bound is attained. ``False`` only
    means the search found nothing.
    """
    intervals = delta_intervals(ts, net)
    d = net.d
    a = np.array([iv.a for iv in intervals])
    b = np.array([iv.b for iv in intervals])
    if d == 1:
        return EqualityDiagnostic(True, intervals, gamma_star(ts, net), np.inf)

    best_slack, best = -np.inf, None

    def consider(g):
        nonlocal best_slack, best
        cert = gamma_membership(ts, g, tol=tol)
        if cert.slack > best_slack:
            best_slack, best = cert.slack, g.copy()
        return cert.slack

    consider(np.clip(gamma_star(ts, net), a, b))
    consider(np.minimum(b, a.max()))
    if best_slack >= -tol:
        return EqualityDiagnostic(True, intervals, best, best_slack)

    per_axis = max(2, int(np.floor(budget ** (1.0 / d))))
    axes = [np.linspace(a[i], b[i], per_axis) if b[i] > a[i] else np.array([a[i]]) for i in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    for g in grid[:budget]:
        if consider(g) >= -tol:
            return EqualityDiagnostic(True, intervals, best, best_slack)

    width = np.where(b > a, b - a, 1.0)

    def neg_slack(z):
        g = a + (b - a) * expit(z)
        return -consider(g)

    frac = np.clip((best - a) / width, 1e-6, 1 - 1e-6)
    z0 = np.log(frac) - np.log1p(-frac)
    minimize(neg_slack, z0, method="Nelder-Mead", options={"maxfev": budget})
    return EqualityDiagnostic(best_slack >= -tol, intervals, best if best_slack >= -tol else None, best_slack)


@dataclass(frozen=True)
class SpectralBoundsReport:
    lower: float
    upper_gamma: float
    upper_gamma_point: np.ndarray
    upper_rho_eps: float
    rho: np.ndarray
    eps: float
    exact: float | None
    exact_tag: str | None
    equality_diagnosed: bool
    equality_witness: np.ndarray | None
    delta_intervals: list[DeltaInterval]
    special_cases: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "lower": {"value": self.lower, "source": "lower_bound"},
            "upper_gamma": {
                "value": self.upper_gamma,
                "gamma": self.upper_gamma_point.tolist(),
                "source": "gamma_search",
            },
            "upper_rho_eps": {
                "value": self.upper_rho_eps,
                "rho": self.rho.tolist(),
                "eps": self.eps,
                "source": "rho_eps_search",
            },
            "exact": None if self.exact is None else {"value": self.exact, "source": self.exact_tag},
            "special_cases": {k: {"value": v, "source": k} for k, v in self.special_cases.items()},
            "equality_diagnosed": self.equality_diagnosed,
            "equality_witness": None if self.equality_witness is None else {
                "value": self.equality_witness.tolist(),
                "source": "equality_diagnostic",
            },
            "delta_intervals": {
                "value": [iv.to_dict() for iv in self.delta_intervals],
                "source": "equality_diagnostic",
            },
        }


def compute_bounds(
    net: JacksonNetwork,
    ts: TrafficSolution | None = None,
    budget: int = DEFAULT_BUDGET,
    starts: int = DEFAULT_STARTS,
    seed: int = 0,
) -> SpectralBoundsReport:
    from .special_cases import closed_forms

    if ts is None:
        ts = solve_traffic(net)
    if not ts.stable:
        raise NetworkError("bounds require a stable network")
    low = lower_bound(ts, net)
    re = upper_bound_rho_eps(ts, net, budget=budget, starts=starts, seed=seed)
    ug = upper_bound_gamma(ts, net, budget=budget, starts=starts, seed=seed, extra_seeds=[re.gamma])
    diag = equality_diagnostic(ts, net)
    forms = closed_forms(net, ts)
    tag, exact = (next(iter(forms.items())) if forms else (None, None))
    return SpectralBoundsReport(
        lower=low,
        upper_gamma=ug.value,
        upper_gamma_point=ug.gamma,
        upper_rho_eps=re.value,
        rho=re.rho,
        eps=re.eps,
        exact=exact,
        exact_tag=tag,
        equality_diagnosed=diag.equality,
        equality_witness=diag.witness,
        delta_intervals=diag.intervals,
        special_cases=forms,
    )

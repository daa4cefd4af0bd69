"""Jackson network model: validation, traffic equations and derived matrices.

A network is the triple ``(lam, mu, P)``; exit probabilities
``p_i0 = 1 - sum_j P[i, j]`` are always derived, never stored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

#: Power iteration shift so that nilpotent routing matrices converge.
SPECTRAL_SHIFT = 1e-6
SPECTRAL_MAX_ITER = 10_000
SPECTRAL_TOL = 1e-12
SPECTRAL_CHUNK = 64
#: Slack allowed on probabilities before they count as structural violations.
PROB_TOL = 1e-12


class NetworkError(ValueError):
    """Raised when a network cannot be used for the requested computation."""


class NetworkFormatError(NetworkError):
    """Raised when a network file cannot be parsed."""


@dataclass(frozen=True)
class JacksonNetwork:
    """Arrival rates ``lam``, service rates ``mu`` and routing matrix ``P``."""

    lam: np.ndarray
    mu: np.ndarray
    P: np.ndarray

    def __init__(self, lam, mu, P):
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(lam, dtype=float)).copy())
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(mu, dtype=float)).copy())
        object.__setattr__(self, "P", np.atleast_2d(np.asarray(P, dtype=float)).copy())
        for arr in (self.lam, self.mu, self.P):
            arr.flags.writeable = False

    @property
    def d(self) -> int:
        return int(self.lam.shape[0])

    @property
    def exit_probabilities(self) -> np.ndarray:
        return 1.0 - self.P.sum(axis=1)

    def to_dict(self) -> dict:
        return {"lambda": self.lam.tolist(), "mu": self.mu.tolist(), "P": self.P.tolist()}

    def __eq__(self, other):
        if not isinstance(other, JacksonNetwork):
            return NotImplemented
        return (
            self.lam.shape == other.lam.shape
            and self.P.shape == other.P.shape
            and np.array_equal(self.lam, other.lam)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.P, other.P)
        )

    __hash__ = None  # type: ignore[assignment]

    def allclose(self, other: "JacksonNetwork", atol: float = 1e-12) -> bool:
        return (
            self.d == other.d
            and np.allclose(self.lam, other.lam, rtol=0, atol=atol)
            and np.allclose(self.mu, other.mu, rtol=0, atol=atol)
            and np.allclose(self.P, other.P, rtol=0, atol=atol)
        )


@dataclass(frozen=True)
class Violation:
    condition: str  # "structure", "A1" or "A2"
    message: str
    index: int | None = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def conditions(self) -> set[str]:
        return {v.condition for v in self.violations}

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "pass"
        return "; ".join(f"[{v.condition}] {v.message}" for v in self.violations)


@dataclass(frozen=True)
class TrafficSolution:
    nu: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    routing_spectral_radius: float
    stable: bool
    residual: float = field(default=0.0)


def routing_spectral_radius(P) -> float:
    """Spectral radius of a nonnegative routing matrix by shifted power iteration."""
    P = np.asarray(P, dtype=float)
    d = P.shape[0]
    if d == 0:
        return 0.0
    # acyclic routing: P is nilpotent, and the shifted iteration would only
    # approach 0 like 1/k
    support = P > 0
    walk = support.copy()
    for _ in range(d - 1):
        walk = (walk.astype(np.int64) @ support) > 0
    if not walk.any():
        return 0.0
    A = P + SPECTRAL_SHIFT * np.eye(d)
    # iterate with A^64 so the 10_000 step cap costs ~150 interpreter steps;
    # squaring with rescaling keeps a tiny spectral radius from underflowing
    B = A
    for _ in range(int(np.log2(SPECTRAL_CHUNK))):
        B = B @ B
        B = B / B.max()
    v = np.full(d, 1.0 / d)
    est = 0.0
    for _ in range(SPECTRAL_MAX_ITER // SPECTRAL_CHUNK):
        v = B @ v
        v = v / v.sum()
        new = float((A @ v).sum())
        if abs(new - est) < SPECTRAL_TOL:
            return max(new - SPECTRAL_SHIFT, 0.0)
        est = new
    # periodic routing: the peripheral eigenvalues are only 1e-6 apart in
    # modulus after shifting, so the iterate keeps rotating
    return float(np.max(np.abs(np.linalg.eigvals(P))))


def rho_contraction(P, rho) -> float:
    """max_i (rho P)_i / rho_i for a strictly positive vector rho."""
    P = np.asarray(P, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (P.shape[0],):
        raise NetworkError(f"rho must have length {P.shape[0]}")
    if np.any(rho <= 0):
        raise NetworkError("rho must have strictly positive components")
    return float(np.max((rho @ P) / rho))


def _reachable_from(P: np.ndarray, sources: Iterable[int]) -> np.ndarray:
    d = P.shape[0]
    seen = np.zeros(d, dtype=bool)
    stack = list(sources)
    for s in stack:
        seen[s] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(P[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return seen


def validate_network(net: JacksonNetwork) -> ValidationReport:
    """Check structure, then assumption (A1) (customers leave), then (A2) (reachability).

    All violations are collected; a structural failure skips (A1)/(A2) since
    those need a well-formed routing matrix.
    """
    out: list[Violation] = []
    d = net.lam.shape[0]
    if net.lam.ndim != 1 or d == 0:
        out.append(Violation("structure", "lambda must be a non-empty vector"))
        return ValidationReport(tuple(out))
    if net.mu.shape != (d,):
        out.append(Violation("structure", f"mu has length {net.mu.shape[0]}, expected {d}"))
    if net.P.shape != (d, d):
        out.append(Violation("structure", f"P has shape {net.P.shape}, expected ({d}, {d})"))
    if out:
        return ValidationReport(tuple(out))

    for i in range(d):
        if not np.isfinite(net.lam[i]) or net.lam[i] < 0:
            out.append(Violation("structure", f"negative arrival rate lambda[{i}]={net.lam[i]}", i))
        if not np.isfinite(net.mu[i]) or net.mu[i] <= 0:
            out.append(Violation("structure", f"non-positive service rate mu[{i}]={net.mu[i]}", i))
    if np.all(net.lam <= 0):
        out.append(Violation("structure", "at least one arrival rate must be positive"))
    for i in range(d):
        row = net.P[i]
        if net.P[i, i] != 0:
            out.append(Violation("structure", f"self-loop P[{i},{i}]={net.P[i, i]} (must be 0)", i))
        if np.any(~np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
            out.append(Violation("structure", f"row {i} of P has entries outside [0, 1]", i))
        if row.sum() > 1 + PROB_TOL:
            out.append(Violation("structure", f"row {i} of P sums to {row.sum()} > 1", i))
    if out:
        return ValidationReport(tuple(out))

    radius = routing_spectral_radius(net.P)
    if radius >= 1 - 1e-9:
        # name the queues that can never leave: no path to an exit
        exits = net.exit_probabilities > PROB_TOL
        trapped = [i for i in range(d) if not np.any(exits & _reachable_from(net.P, [i]))]
        idx = trapped[0] if trapped else None
        out.append(Violation(
            "A1",
            f"routing spectral radius {radius:.6g} is not < 1"
            + (f"; customers at queue {idx} never leave" if idx is not None else ""),
            idx,
        ))
    seen = _reachable_from(net.P, np.nonzero(net.lam > 0)[0])
    for i in np.nonzero(~seen)[0]:
        out.append(Violation("A2", f"queue {i} receives no customers", int(i)))
    return ValidationReport(tuple(out))


def check_network(net: JacksonNetwork) -> JacksonNetwork:
    report = validate_network(net)
    if not report.ok:
        raise NetworkError(report.describe())
    return net


def solve_traffic(net: JacksonNetwork) -> TrafficSolution:
    """Solve nu = lam + nu P and form G = (I - P)^-1 and the hitting matrix Q."""
    check_network(net)
    d = net.d
    A = np.eye(d) - net.P
    try:
        G = np.linalg.inv(A)
        nu = np.linalg.solve(A.T, net.lam)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - excluded by (A1)
        raise NetworkError("I - P is singular") from exc
    Q = G / np.diag(G)[np.newaxis, :]
    np.fill_diagonal(Q, 1.0)
    residual = float(np.max(np.abs(nu - net.lam - nu @ net.P)))
    return TrafficSolution(
        nu=nu,
        G=G,
        Q=Q,
        routing_spectral_radius=routing_spectral_radius(net.P),
        stable=bool(np.all(nu < net.mu)),
        residual=residual,
    )


def require_stable(net: JacksonNetwork, ts: TrafficSolution) -> None:
    if not ts.stable:
        bad = [i for i in range(net.d) if ts.nu[i] >= net.mu[i]]
        i = bad[0]
        raise NetworkError(
            f"network is unstable: nu[{i}]={ts.nu[i]:.6g} >= mu[{i}]={net.mu[i]:.6g}"
        )


def time_reverse(net: JacksonNetwork, ts: TrafficSolution | None = None) -> JacksonNetwork:
    """Stationary time reversal, which is again a Jackson network."""
    if ts is None:
        ts = solve_traffic(net)
    require_stable(net, ts)
    nu = ts.nu
    lam_r = nu * net.exit_probabilities
    # P_r[i, j] = nu_j P[j, i] / nu_i
    P_r = (nu[np.newaxis, :] * net.P.T) / nu[:, np.newaxis]
    np.fill_diagonal(P_r, 0.0)
    P_r = np.clip(P_r, 0.0, 1.0)  # rounding can push a sole successor to 1 + 1ulp
    lam_r = np.where(np.abs(lam_r) < 1e-15, 0.0, lam_r)
    return JacksonNetwork(lam_r, net.mu, P_r)


def stationary_probability(ts: TrafficSolution, net: JacksonNetwork, x) -> float:
    """Product-form stationary probability of state ``x``."""
    require_stable(net, ts)
    x = np.asarray(x)
    if x.shape != (net.d,) or np.any(x < 0):
        raise NetworkError(f"state must be a nonnegative vector of length {net.d}")
    r = ts.nu / net.mu
    return float(np.prod(r ** x * (1 - r)))


def stationary_marginal(ts: TrafficSolution, net: JacksonNetwork, i: int, n: int) -> float:
    require_stable(net, ts)
    r = ts.nu[i] / net.mu[i]
    return float(r ** n * (1 - r))


def detect_branching(P, tol: float = PROB_TOL) -> str:
    """Classify the column supports of P and its transpose.

    Returns one of ``"none"``, ``"branching"``, ``"transposed_branching"``, ``"both"``.
    """
    P = np.asarray(P, dtype=float)
    positive = P > tol
    direct = bool(np.all(positive.sum(axis=0) <= 1))
    transposed = bool(np.all(positive.sum(axis=1) <= 1))
    if direct and transposed:
        return "both"
    if direct:
        return "branching"
    if transposed:
        return "transposed_branching"
    return "none"


# -- network file format ----------------------------------------------------

_KEYS = ("lambda", "mu", "P")


def network_from_dict(data) -> JacksonNetwork:
    if not isinstance(data, dict):
        raise NetworkFormatError("network file must contain a JSON object")
    unknown = sorted(set(data) - set(_KEYS))
    if unknown:
        raise NetworkFormatError(f"unknown key(s): {', '.join(unknown)}")
    for key in _KEYS:
        if key not in data:
            raise NetworkFormatError(f"missing key '{key}'")
    for key in ("lambda", "mu"):
        val = data[key]
        if not isinstance(val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in val
        ):
            raise NetworkFormatError(f"field '{key}' must be an array of numbers")
    P = data["P"]
    if not isinstance(P, list) or not all(isinstance(r, list) for r in P):
        raise NetworkFormatError("field 'P' must be an array of arrays")
    for i, row in enumerate(P):
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise NetworkFormatError(f"field 'P' row {i} must contain only numbers")
    d = len(data["lambda"])
    if len(P) == 0 and d == 0:
        raise NetworkFormatError("empty network")
    if any(len(row) != len(P) for row in P):
        raise NetworkFormatError("field 'P' must be a square matrix")
    return JacksonNetwork(data["lambda"], data["mu"], np.array(P, dtype=float).reshape(len(P), len(P)))


def loads_network(text: str) -> JacksonNetwork:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return network_from_dict(data)


def load_network(path) -> JacksonNetwork:
    return loads_network(Path(path).read_text())


def dumps_network(net: JacksonNetwork) -> str:
    data = net.to_dict()
    body = ",\n".join(f"  {json.dumps(k)}: {json.dumps(v)}" for k, v in data.items())
    return "{\n" + body + "\n}"

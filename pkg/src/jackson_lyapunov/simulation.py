"""Event-by-event simulation of the Jackson network Markov chain.

Every replication owns its random stream, built from ``(seed, replication
index)`` with ``SeedSequence(seed, spawn_key=(index,))``, so results do not
depend on how replications are split across worker threads. The inner loop
is compiled with numba; it keeps the total jump rate up to date as queues
switch between idle and busy instead of recomputing it.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numba import njit
from scipy.stats import beta, norm

from .network import (
    JacksonNetwork,
    NetworkError,
    TrafficSolution,
    require_stable,
    solve_traffic,
    stationary_marginal,
    stationary_probability,
)

DEFAULT_SEED = 0
DEFAULT_BATCHES = 20
CONFIDENCE = 0.95
CLOPPER_PEARSON_BELOW = 0.01
_SEED_MASK = (1 << 64) - 1


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    seed: int = DEFAULT_SEED
    replications: int = 1
    warmup: float | None = None  # None means horizon / 100
    initial_state: tuple[int, ...] | None = None  # None means the empty network

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon < 0:
            raise ValueError("horizon must be finite and >= 0")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValueError("replications must be a positive integer")
        if self.warmup is not None and not 0 <= self.warmup <= self.horizon:
            raise ValueError("warmup must lie in [0, horizon]")
        if self.initial_state is not None:
            x = np.asarray(self.initial_state)
            if x.ndim != 1 or np.any(x < 0) or np.any(x != np.round(x)):
                raise ValueError("initial_state must be a vector of nonnegative integers")
            object.__setattr__(self, "initial_state", tuple(int(v) for v in x))

    @property
    def warmup_time(self) -> float:
        return self.horizon / 100.0 if self.warmup is None else float(self.warmup)

    def start(self, d: int) -> np.ndarray:
        if self.initial_state is None:
            return np.zeros(d, dtype=np.int64)
        if len(self.initial_state) != d:
            raise ValueError(f"initial_state must have length {d}")
        return np.array(self.initial_state, dtype=np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": int(self.seed),
            "horizon": float(self.horizon),
            "replications": int(self.replications),
            "warmup": self.warmup_time,
            "initial_state": None if self.initial_state is None else list(self.initial_state),
        }


def replication_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & _SEED_MASK, spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


# -- event table ------------------------------------------------------------------

@dataclass(frozen=True)
class EventTable:
    """Every jump type with a positive rate: src -1 is an arrival, dst -1 an exit."""

    src: np.ndarray
    dst: np.ndarray
    rate: np.ndarray
    arrival_total: float
    service_total: np.ndarray  # per queue, sum of its service event rates

    @classmethod
    def from_network(cls, net: JacksonNetwork) -> "EventTable":
        src, dst, rate = [], [], []
        p0 = net.exit_probabilities
        for i in range(net.d):
            if net.lam[i] > 0:
                src.append(-1), dst.append(i), rate.append(net.lam[i])
        for i in range(net.d):
            if p0[i] > 0:
                src.append(i), dst.append(-1), rate.append(net.mu[i] * p0[i])
            for j in range(net.d):
                if j != i and net.P[i, j] > 0:
                    src.append(i), dst.append(j), rate.append(net.mu[i] * net.P[i, j])
        src = np.array(src, dtype=np.int64)
        rate = np.array(rate, dtype=float)
        service = np.array([rate[src == i].sum() for i in range(net.d)])
        return cls(src, np.array(dst, dtype=np.int64), rate, float(rate[src < 0].sum()), service)

    def __len__(self) -> int:
        return len(self.rate)

    def labels(self) -> list[str]:
        out = []
        for s, t in zip(self.src, self.dst):
            a = "ext" if s < 0 else str(s)
            b = "exit" if t < 0 else str(t)
            out.append(f"{a}->{b}")
        return out


@dataclass(frozen=True)
class TargetSet:
    """A finite set of states, stored as a boolean mask over the box [0, cap]^d."""

    mask: np.ndarray

    @property
    def cap(self) -> int:
        return self.mask.shape[0] - 1

    @property
    def d(self) -> int:
        return self.mask.ndim

    @classmethod
    def from_predicate(cls, pred: Callable[[np.ndarray], np.ndarray], d: int, cap: int) -> "TargetSet":
        """``pred`` maps an (n, d) array of states to n booleans; states beyond cap are excluded."""
        grids = np.meshgrid(*[np.arange(cap + 1)] * d, indexing="ij")
        states = np.stack([g.ravel() for g in grids], axis=1)
        return cls(np.asarray(pred(states), dtype=bool).reshape((cap + 1,) * d))

    @classmethod
    def from_region(cls, region) -> "TargetSet":
        return cls(np.asarray(region.mask, dtype=bool))

    def __len__(self) -> int:
        return int(self.mask.sum())

    def contains(self, x) -> bool:
        x = np.asarray(x)
        if np.any(x < 0) or np.any(x > self.cap):
            return False
        return bool(self.mask[tuple(x)])


def _strides(d: int, cap: int) -> np.ndarray:
    return np.array([(cap + 1) ** (d - 1 - k) for k in range(d)], dtype=np.int64)


# -- compiled kernels -----------------------------------------------------------------

@njit(cache=True, nogil=True)
def _choose(u, x, src, rate):
    acc = 0.0
    last = -1
    for e in range(rate.shape[0]):
        s = src[e]
        if s >= 0 and x[s] == 0:
            continue
        last = e
        acc += rate[e]
        if u < acc:
            return e
    return last  # only reached through rounding at the top of the range


@njit(cache=True, nogil=True)
def _jump(x, e, src, dst, service, total):
    s = src[e]
    t = dst[e]
    if s >= 0:
        x[s] -= 1
        if x[s] == 0:
            total -= service[s]
    if t >= 0:
        x[t] += 1
        if x[t] == 1:
            total += service[t]
    return total


@njit(cache=True, nogil=True)
def _in_mask(x, mask_flat, cap, strides):
    k = 0
    for i in range(x.shape[0]):
        if x[i] > cap:
            return False
        k += x[i] * strides[i]
    return mask_flat[k]


@njit(cache=True, nogil=True)
def _path_kernel(rng, x, horizon, max_jumps, src, dst, rate, arrival_total, service,
                 use_target, mask_flat, cap, strides, interior_counts):
    d = x.shape[0]
    total = arrival_total
    for i in range(d):
        if x[i] > 0:
            total += service[i]
    t = 0.0
    jumps = 0
    hit = np.nan
    last = -1
    status = 0
    while max_jumps < 0 or jumps < max_jumps:
        if not total > 0.0:
            status = 1
            break
        dt = rng.exponential(1.0 / total)
        if t + dt > horizon:
            t = horizon
            break
        t += dt
        interior = True
        for i in range(d):
            if x[i] == 0:
                interior = False
                break
        e = _choose(rng.random() * total, x, src, rate)
        if interior:
            interior_counts[e] += 1
        total = _jump(x, e, src, dst, service, total)
        last = e
        jumps += 1
        if use_target and _in_mask(x, mask_flat, cap, strides):
            hit = t
            break
    return t, jumps, hit, last, status


@njit(cache=True, nogil=True)
def _occupancy_kernel(rng, x, horizon, warmup, src, dst, rate, arrival_total, service,
                      cap, strides, occ, marg):
    d = x.shape[0]
    nb = occ.shape[0]
    width = (horizon - warmup) / nb
    total = arrival_total
    for i in range(d):
        if x[i] > 0:
            total += service[i]
    t = 0.0
    jumps = 0
    while True:
        if not total > 0.0:
            return jumps, 1
        dt = rng.exponential(1.0 / total)
        end = min(t + dt, horizon)
        a = max(t, warmup)
        if end > a:
            inbox = True
            k = 0
            for i in range(d):
                if x[i] > cap:
                    inbox = False
                else:
                    k += x[i] * strides[i]
            b0 = min(int((a - warmup) / width), nb - 1)
            b1 = min(int((end - warmup) / width), nb - 1)
            for b in range(b0, b1 + 1):
                lo = max(a, warmup + b * width)
                hi = min(end, warmup + (b + 1) * width)
                if hi <= lo:
                    continue
                ov = hi - lo
                if inbox:
                    occ[b, k] += ov
                for i in range(d):
                    if x[i] <= cap:
                        marg[b, i, x[i]] += ov
        if t + dt >= horizon:
            return jumps, 0
        t += dt
        e = _choose(rng.random() * total, x, src, rate)
        total = _jump(x, e, src, dst, service, total)
        jumps += 1


# -- paths ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathBatch:
    """One row per replication."""

    final_states: np.ndarray  # (n, d)
    hit_times: np.ndarray  # nan when the target was not reached
    jumps: np.ndarray
    end_times: np.ndarray  # time of stopping: hit, horizon or last allowed jump
    last_events: np.ndarray  # index into the event table, -1 if no jump
    interior_counts: np.ndarray  # (len(events),) jump types taken from interior states
    events: EventTable

    def __len__(self) -> int:
        return len(self.jumps)

    def summary(self, k: int = 0) -> dict[str, Any]:
        h = self.hit_times[k]
        return {
            "final_state": self.final_states[k].tolist(),
            "hit_time": None if np.isnan(h) else float(h),
            "jumps": int(self.jumps[k]),
            "end_time": float(self.end_times[k]),
        }


def _blocks(n: int, workers: int) -> list[range]:
    workers = max(1, min(int(workers), n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _run_blocks(fn, n: int, workers: int) -> None:
    blocks = _blocks(n, workers)
    if len(blocks) == 1:
        fn(blocks[0])
        return
    with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
        for f in [pool.submit(fn, b) for b in blocks]:
            f.result()


def simulate_paths(
    net: JacksonNetwork,
    config: SimConfig,
    target: TargetSet | None = None,
    max_jumps: int | None = None,
    workers: int = 1,
) -> PathBatch:
    """Run ``config.replications`` paths from ``config.initial_state``.

    A path stops at the horizon, at the first entry into ``target`` strictly
    after time 0, or after ``max_jumps`` jumps, whichever comes first.
    """
    d = net.d
    x0 = config.start(d)
    ev = EventTable.from_network(net)
    if len(ev) == 0 or ev.arrival_total <= 0 and not np.any(x0 > 0):
        raise SimulationError("zero total jump rate")
    if target is not None and target.d != d:
        raise ValueError("target dimension does not match the network")
    n = int(config.replications)
    cap = target.cap if target is not None else 0
    mask_flat = target.mask.ravel() if target is not None else np.zeros(1, dtype=bool)
    strides = _strides(d, cap)
    mj = -1 if max_jumps is None else int(max_jumps)

    final = np.empty((n, d), dtype=np.int64)
    hits = np.empty(n)
    njumps = np.empty(n, dtype=np.int64)
    ends = np.empty(n)
    last = np.empty(n, dtype=np.int64)
    counts = np.zeros((n, len(ev)), dtype=np.int64)

    def work(block):
        for r in block:
            x = x0.copy()
            t, j, h, e, status = _path_kernel(
                replication_rng(config.seed, r), x, float(config.horizon), mj,
                ev.src, ev.dst, ev.rate, ev.arrival_total, ev.service_total,
                target is not None, mask_flat, cap, strides, counts[r],
            )
            if status:
                raise SimulationError("zero total jump rate")
            final[r], hits[r], njumps[r], ends[r], last[r] = x, h, j, t, e

    _run_blocks(work, n, workers)
    return PathBatch(final, hits, njumps, ends, last, counts.sum(axis=0), ev)


def simulate_path(
    net: JacksonNetwork, config: SimConfig, target: TargetSet | None = None, max_jumps: int | None = None
) -> dict[str, Any]:
    """Summary (final state, hit time or None, jump count) of replication 0."""
    one = SimConfig(config.horizon, config.seed, 1, config.warmup, config.initial_state)
    return simulate_paths(net, one, target, max_jumps).summary(0)


# -- estimates -------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationEstimate:
    kind: str  # "stationary_marginals" or "tail_curve"
    grid: list
    values: np.ndarray
    half_widths: np.ndarray
    seed: int
    replications: int
    total_time: float
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "grid": self.grid,
            "values": np.asarray(self.values).tolist(),
            "half_widths": np.asarray(self.half_widths).tolist(),
            "seed": int(self.seed),
            "replications": int(self.replications),
            "total_time": float(self.total_time),
            **{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.extra.items()},
        }


def _z() -> float:
    return float(norm.ppf(0.5 + CONFIDENCE / 2))


def estimate_stationary(
    net: JacksonNetwork,
    ts: TrafficSolution | None,
    config: SimConfig,
    box_cap: int,
    batches: int = DEFAULT_BATCHES,
    workers: int = 1,
) -> SimulationEstimate:
    """Time-average occupancy of every state in [0, box_cap]^d against the product form.

    Occupancy is accumulated over ``[warmup, horizon]`` split into ``batches``
    equal slices; the fractions from every (replication, slice) pair are the
    samples behind the normal-approximation half-widths.
    """
    if ts is None:
        ts = solve_traffic(net)
    require_stable(net, ts)
    warmup = config.warmup_time
    if not config.horizon > warmup:
        raise ValueError("stationary estimation needs horizon > warmup")
    if box_cap < 0 or batches < 2 and config.replications < 2:
        raise ValueError("need box_cap >= 0 and at least two samples")
    d = net.d
    ev = EventTable.from_network(net)
    strides = _strides(d, box_cap)
    S = (box_cap + 1) ** d
    n = int(config.replications)
    occ = np.zeros((n, batches, S))
    marg = np.zeros((n, batches, d, box_cap + 1))
    x0 = config.start(d)

    def work(block):
        for r in block:
            _, status = _occupancy_kernel(
                replication_rng(config.seed, r), x0.copy(), float(config.horizon), warmup,
                ev.src, ev.dst, ev.rate, ev.arrival_total, ev.service_total,
                box_cap, strides, occ[r], marg[r],
            )
            if status:
                raise SimulationError("zero total jump rate")

    _run_blocks(work, n, workers)
    width = (config.horizon - warmup) / batches
    samples = (occ / width).reshape(n * batches, S)
    msamples = (marg / width).reshape(n * batches, d, box_cap + 1)
    m = samples.shape[0]
    z = _z()
    est = samples.mean(axis=0)
    hw = z * samples.std(axis=0, ddof=1) / np.sqrt(m)
    mest = msamples.mean(axis=0)
    mhw = z * msamples.std(axis=0, ddof=1) / np.sqrt(m)

    grids = np.meshgrid(*[np.arange(box_cap + 1)] * d, indexing="ij")
    states = np.stack([g.ravel() for g in grids], axis=1)
    exact = np.array([stationary_probability(ts, net, s) for s in states])
    mexact = np.array([[stationary_marginal(ts, net, i, k) for k in range(box_cap + 1)] for i in range(d)])
    dev = np.abs(est - exact)
    return SimulationEstimate(
        kind="stationary_marginals",
        grid=states.tolist(),
        values=est,
        half_widths=hw,
        seed=config.seed,
        replications=n,
        total_time=float(n * config.horizon),
        extra={
            "exact": exact,
            "max_abs_deviation": float(dev.max()),
            "max_deviation_state": states[int(dev.argmax())].tolist(),
            "marginals": mest,
            "marginal_half_widths": mhw,
            "marginal_exact": mexact,
            "warmup": warmup,
            "batches": int(batches),
        },
    )


def _binomial_edges(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Normal-approximation interval, switching to Clopper-Pearson below 1%."""
    alpha = 1.0 - CONFIDENCE
    p = k / n
    hw = _z() * np.sqrt(p * (1 - p) / n)
    lo, hi = p - hw, p + hw
    small = p < CLOPPER_PEARSON_BELOW
    if np.any(small):
        ks = k[small]
        cp_lo = np.where(ks > 0, beta.ppf(alpha / 2, ks, n - ks + 1), 0.0)
        cp_hi = np.where(ks < n, beta.ppf(1 - alpha / 2, ks + 1, n - ks), 1.0)
        lo[small], hi[small] = cp_lo, cp_hi
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def estimate_tail(
    net: JacksonNetwork,
    config: SimConfig,
    target: TargetSet,
    x0,
    time_grid,
    workers: int = 1,
) -> SimulationEstimate:
    """Empirical survival P_x0(tau_E > t) on ``time_grid`` with binomial half-widths.

    Paths run until they hit ``target`` or until the largest grid time, so
    ``config.horizon`` is ignored; ``config.initial_state`` is replaced by ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    if target.contains(x0):
        raise ValueError("x0 lies in the target set")
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ValueError("time_grid must be a non-empty vector of finite times >= 0")
    t_max = float(grid.max())
    run = SimConfig(t_max, config.seed, config.replications, 0.0, tuple(x0.tolist()))
    batch = simulate_paths(net, run, target=target, workers=workers)
    tau = np.where(np.isnan(batch.hit_times), np.inf, batch.hit_times)
    n = len(tau)
    k = (tau[np.newaxis, :] > grid[:, np.newaxis]).sum(axis=1)
    p = k / n
    lo, hi = _binomial_edges(k.astype(float), n)
    order = np.argsort(grid, kind="stable")
    monotone = bool(np.all(np.diff(p[order]) <= 0))
    finite = np.isfinite(tau)
    return SimulationEstimate(
        kind="tail_curve",
        grid=grid.tolist(),
        values=p,
        half_widths=np.maximum(p - lo, hi - p),
        seed=config.seed,
        replications=n,
        total_time=float(np.where(finite, tau, t_max).sum()),
        extra={
            "lower": lo,
            "upper": hi,
            "survivors": k,
            "x0": x0.tolist(),
            "monotone": monotone,
            "median_hit_time": float(np.median(tau)),
        },
    )


@dataclass(frozen=True)
class BoundCheck:
    grid: np.ndarray
    bound: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    margins: np.ndarray
    boundary_clean: bool

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= 0))

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid": self.grid.tolist(),
            "bound": self.bound.tolist(),
            "estimate": self.estimate.tolist(),
            "lower": self.lower.tolist(),
            "margins": self.margins.tolist(),
            "boundary_clean": self.boundary_clean,
            "passed": self.passed,
        }


def verify_against_bound(estimate: SimulationEstimate, region) -> BoundCheck:
    """Margins bound(t) - (estimate(t) - lower half-width) for a tail estimate.

    ``region`` is the drift region whose set E the paths were stopped on; its
    ``tail_bound`` gives h(x0) exp(-theta t) / c_E.
    """
    if estimate.kind != "tail_curve":
        raise ValueError("verify_against_bound needs a tail_curve estimate")
    grid = np.asarray(estimate.grid, dtype=float)
    bound = np.asarray(region.tail_bound(np.asarray(estimate.extra["x0"]), grid), dtype=float)
    lower = np.asarray(estimate.extra["lower"], dtype=float)
    return BoundCheck(grid, bound, np.asarray(estimate.values), lower, bound - lower, bool(region.boundary_clean))


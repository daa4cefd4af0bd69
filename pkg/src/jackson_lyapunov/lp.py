"""Dense tableau simplex for small zero-sum matrix games.

``solve_game(M)`` returns the value ``max_theta min_k (M theta)_k`` over
probability vectors ``theta`` together with an optimal ``theta`` and an
optimal opposing mixture ``v`` (so that ``max_j (v M)_j`` equals the value).
The game is shifted to have positive payoffs and solved as the standard-form
LP ``max 1.w  s.t.  M'^T w <= 1, w >= 0`` whose origin is feasible, so no
phase one is needed. Bland's rule rules out cycling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-12
MAX_PIVOTS = 10_000


class LPError(RuntimeError):
    pass


@dataclass(frozen=True)
class GameSolution:
    value: float
    theta: np.ndarray  # maximiser's mixture over columns
    v: np.ndarray  # minimiser's mixture over rows
    pivots: int


def solve_game(M) -> GameSolution:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0 or M.shape[1] == 0:
        raise LPError("payoff matrix must be non-empty and two-dimensional")
    if not np.all(np.isfinite(M)):
        raise LPError("payoff matrix has non-finite entries")
    K, n = M.shape
    shift = 1.0 - M.min()
    Mp = M + shift  # every entry >= 1

    # rows: n constraints on w, then the objective row
    T = np.zeros((n + 1, K + n + 1))
    T[:n, :K] = Mp.T
    T[:n, K:K + n] = np.eye(n)
    T[:n, -1] = 1.0
    T[n, :K] = -1.0
    basis = list(range(K, K + n))

    pivots = 0
    while True:
        candidates = np.nonzero(T[n, :-1] < -PIVOT_TOL)[0]
        if candidates.size == 0:
            break
        col = int(candidates[0])
        column = T[:n, col]
        rows = np.nonzero(column > PIVOT_TOL)[0]
        if rows.size == 0:  # pragma: no cover - bounded since Mp > 0
            raise LPError("unbounded game LP")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(min(tied, key=lambda r: basis[r]))
        T[row] /= T[row, col]
        for r in range(n + 1):
            if r != row and T[r, col] != 0.0:
                T[r] -= T[r, col] * T[row]
        basis[row] = col
        pivots += 1
        if pivots > MAX_PIVOTS:  # pragma: no cover
            raise LPError("simplex pivot limit reached")

    z = T[n, -1]
    if not z > 0:  # pragma: no cover
        raise LPError("degenerate game LP")
    w = np.zeros(K)
    for r, b in enumerate(basis):
        if b < K:
            w[b] = T[r, -1]
    u = np.maximum(T[n, K:K + n], 0.0)
    theta = u / u.sum()
    v = np.maximum(w, 0.0)
    v = v / v.sum()
    return GameSolution(value=1.0 / z - shift, theta=theta, v=v, pivots=pivots)

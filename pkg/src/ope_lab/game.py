"""Dense two-phase simplex solver and the zero-sum selection game.

The row player mixes over candidate policies with ``p``; the column player
mixes over estimators with ``w``. The value is

    z* = max_p min_e (p^T C)_e,

found from the LP ``max z s.t. p^T C >= z 1, sum(p) = 1, p >= 0``. The
column player's strategy is read off the duals of the ``E`` inequality rows.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9
MAX_PIVOTS = 10_000


class LPStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LPError(RuntimeError):
    def __init__(self, status: LPStatus, message: str):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    basis: tuple[int, ...]
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    pivots: int


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    col_vals = tab[:, col].copy()
    col_vals[row] = 0.0
    tab -= np.outer(col_vals, tab[row])


def _simplex(tab: np.ndarray, basis: list[int], cost: np.ndarray, allowed: np.ndarray,
             pivots: int) -> int:
    """Maximize ``cost @ x`` over the tableau ``[B^-1 A | B^-1 b]`` with Bland's rule."""
    m = tab.shape[0]
    while True:
        reduced = cost - cost[basis] @ tab[:, :-1]
        candidates = np.flatnonzero((reduced > PIVOT_TOL) & allowed)
        if candidates.size == 0:
            return pivots
        col = int(candidates[0])
        column = tab[:, col]
        positive = column > PIVOT_TOL
        if not positive.any():
            raise LPError(LPStatus.UNBOUNDED, "linear program is unbounded")
        ratios = np.full(m, np.inf)
        ratios[positive] = tab[positive, -1] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(tab, row, col)
        basis[row] = col
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise RuntimeError("simplex pivot limit exceeded")


def lp_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> LPResult:
    """Maximize ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.

    Two-phase primal simplex on a dense tableau with Bland's anti-cycling
    rule. Raises :class:`LPError` with status ``INFEASIBLE`` or
    ``UNBOUNDED``. Duals are returned per original constraint row, signed so
    that ``duals_ub >= 0`` at an optimum.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # equality form: [A_ub I; A_eq 0] [x; s] = b
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b *= sign

    n_real = n + m_ub
    basis: list[int] = []
    art_rows = []
    for i in range(m):
        if i < m_ub and sign[i] > 0:
            basis.append(n + i)
        else:
            art_rows.append(i)
            basis.append(-1)
    n_art = len(art_rows)
    tab = np.zeros((m, n_real + n_art + 1))
    tab[:, :n_real] = A
    tab[:, -1] = b
    for j, i in enumerate(art_rows):
        tab[i, n_real + j] = 1.0
        basis[i] = n_real + j

    pivots = 0
    if n_art:
        phase1 = np.zeros(n_real + n_art)
        phase1[n_real:] = -1.0
        pivots = _simplex(tab, basis, phase1, np.ones(n_real + n_art, dtype=bool), pivots)
        if -phase1[basis] @ tab[:, -1] > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
            raise LPError(LPStatus.INFEASIBLE, "linear program is infeasible")
        keep = []
        for i in range(m):
            if basis[i] >= n_real:
                mags = np.abs(tab[i, :n_real])
                if mags.max(initial=0.0) > PIVOT_TOL:
                    j = int(np.argmax(mags))
                    _pivot(tab, i, j)
                    basis[i] = j
                    pivots += 1
                else:
                    continue  # redundant row
            keep.append(i)
        tab = np.delete(tab[keep], np.s_[n_real:n_real + n_art], axis=1)
        basis = [basis[i] for i in keep]
    else:
        keep = list(range(m))

    cost = np.concatenate([c, np.zeros(m_ub)])
    pivots = _simplex(tab, basis, cost, np.ones(n_real, dtype=bool), pivots)

    sol = np.zeros(n_real)
    sol[basis] = tab[:, -1]
    B = A[keep][:, basis]
    y_kept = np.linalg.solve(B.T, cost[basis])
    y = np.zeros(m)
    y[keep] = y_kept
    y *= sign
    return LPResult(sol[:n], float(c @ sol[:n]), tuple(basis), y[:m_ub], y[m_ub:], pivots)


@dataclass(frozen=True)
class GameSolution:
    p_star: np.ndarray
    w_star: np.ndarray
    value: float
    residual: float


def equilibrium_residual(C, p, w, value: float) -> float:
    """Largest violation of the saddle-point conditions at ``(p, w, value)``."""
    C = np.asarray(C, dtype=float)
    return float(max(value - (p @ C).min(), (C @ w).max() - value, 0.0))


def _project_simplex(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    return v / v.sum()


def solve_zero_sum(C) -> GameSolution:
    """Optimal mixed strategies and value of the game with payoff ``C`` (row player maximizes).

    The payoff is affinely rescaled to ``[0, 1]`` before solving, which keeps
    the tableau well conditioned and makes the returned strategies invariant
    to shifting or positively scaling ``C``.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise ValueError("payoff must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("payoff entries must be finite")
    L, E = C.shape
    row_min, col_max = C.min(axis=1), C.max(axis=0)
    if row_min.max() == col_max.min():
        # pure saddle point: exact, no LP tolerance involved
        p, w = np.zeros(L), np.zeros(E)
        p[int(np.argmax(row_min))] = 1.0
        w[int(np.argmin(col_max))] = 1.0
        value = float(row_min.max())
        return GameSolution(p, w, value, equilibrium_residual(C, p, w, value))
    lo, hi = C.min(), C.max()
    span = hi - lo if hi > lo else 1.0
    S = (C - lo) / span
    # variables: p_1..p_L, z+, z-
    c = np.zeros(L + 2)
    c[L], c[L + 1] = 1.0, -1.0
    A_ub = np.zeros((E, L + 2))
    A_ub[:, :L] = -S.T
    A_ub[:, L] = 1.0
    A_ub[:, L + 1] = -1.0
    A_eq = np.zeros((1, L + 2))
    A_eq[0, :L] = 1.0
    res = lp_solve(c, A_ub, np.zeros(E), A_eq, np.ones(1))
    p = _project_simplex(res.x[:L])
    w = _project_simplex(res.duals_ub)
    value = float((p @ C).min())
    return GameSolution(p, w, value, equilibrium_residual(C, p, w, value))


def brute_force_value(C, resolution: int) -> float:
    """Max over a simplex grid (``resolution`` points per edge) of ``min_e (p^T C)_e``."""
    C = np.asarray(C, dtype=float)
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    L = C.shape[0]
    if L > 4:
        raise ValueError("brute force is limited to at most 4 rows")
    n = resolution - 1
    if L == 1:
        return float(C[0].min())
    best = -np.inf
    for first in range(n + 1):
        rest = compositions(n - first, L - 1)
        P = np.column_stack([np.full(rest.shape[0], first), rest]) / n
        best = max(best, float((P @ C).min(axis=1).max()))
    return best


def compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]])
    if parts == 2:
        k = np.arange(total + 1)
        return np.column_stack([k, total - k])
    if parts == 3:
        i, j = np.triu_indices(total + 1)
        return np.column_stack([i, j - i, total - j])
    blocks = []
    for k in range(total + 1):
        rest = compositions(total - k, parts - 1)
        blocks.append(np.column_stack([np.full(rest.shape[0], k), rest]))
    return np.vstack(blocks)


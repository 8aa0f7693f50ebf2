"""Dense two-phase tableau simplex for ``min c.x  s.t.  A x = b, x >= 0``."""

from __future__ import annotations

import numpy as np


class InfeasibleLP(ValueError):
    pass


class UnboundedLP(ValueError):
    pass


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])


def _iterate(T: np.ndarray, basis: list[int], ncols: int, tol: float, max_pivots: int) -> None:
    """Pivot until no reduced cost among the first ``ncols`` columns is negative.

    Dantzig's rule, falling back to Bland's rule after a run of degenerate
    pivots so that cycling cannot occur.
    """
    degenerate = 0
    for _ in range(max_pivots):
        reduced = T[-1, :ncols]
        if degenerate > 50:
            candidates = np.flatnonzero(reduced < -tol)
            if candidates.size == 0:
                return
            col = int(candidates[0])
        else:
            col = int(np.argmin(reduced))
            if reduced[col] >= -tol:
                return
        column = T[:-1, col]
        rows = np.flatnonzero(column > tol)
        if rows.size == 0:
            raise UnboundedLP("objective is unbounded below")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol]
        row = int(min(ties, key=lambda r: basis[r]))
        degenerate = degenerate + 1 if best <= tol else 0
        _pivot(T, row, col)
        basis[row] = col
    raise RuntimeError(f"simplex exceeded {max_pivots} pivots")


def solve_lp(c, A, b, tol: float = 1e-9, max_pivots: int = 100_000) -> tuple[np.ndarray, float]:
    """Return an optimal vertex and its objective value.

    Redundant equality rows are detected after phase I and dropped. The basic
    solution is recomputed with a direct solve on the final basis, so equality
    residuals are at rounding level.
    """
    c = np.asarray(c, dtype=float)
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float)
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A_s = A * sign[:, None]
    b_s = b * sign

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A_s
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b_s
    T[-1, :n] = -A_s.sum(axis=0)
    T[-1, -1] = -b_s.sum()
    basis = list(range(n, n + m))
    _iterate(T, basis, n + m, tol, max_pivots)
    scale = max(1.0, float(np.abs(b_s).max(initial=0.0)))
    if -T[-1, -1] > tol * scale * max(1, m):
        raise InfeasibleLP(f"constraints are infeasible (phase-one residual {-T[-1, -1]:.3g})")

    keep = []
    for r in range(m):
        if basis[r] < n:
            keep.append(r)
            continue
        candidates = np.flatnonzero(np.abs(T[r, :n]) > tol)
        if candidates.size:
            _pivot(T, r, int(candidates[0]))
            basis[r] = int(candidates[0])
            keep.append(r)
    rows = keep + [m]
    T = T[rows][:, list(range(n)) + [n + m]]
    basis = [basis[r] for r in keep]

    T[-1, :] = 0.0
    T[-1, :n] = c
    for r, j in enumerate(basis):
        T[-1] -= c[j] * T[r]
    _iterate(T, basis, n, tol, max_pivots)

    # A_B has full column rank and the system is consistent, so least squares
    # over all rows recovers the basic solution exactly up to rounding
    x = np.zeros(n)
    if basis:
        x[basis] = np.linalg.lstsq(A_s[:, basis], b_s, rcond=None)[0]
    x[np.abs(x) < tol * scale] = 0.0
    x = np.maximum(x, 0.0)
    return x, float(c @ x)

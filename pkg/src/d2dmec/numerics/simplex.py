"""Two-phase dense-tableau simplex: Dantzig pricing with a Bland fallback against cycling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SimplexBreakdown(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """``minimize c @ x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lb <= x <= ub``.

    ``lb`` defaults to zero and must be finite; ``ub`` entries may be ``inf``.
    """

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        for a, b in (("A_eq", "b_eq"), ("A_ub", "b_ub")):
            A, rhs = getattr(self, a), getattr(self, b)
            if A is None:
                A, rhs = np.zeros((0, n)), np.zeros(0)
            A = np.asarray(A, dtype=float).reshape(-1, n)
            rhs = np.asarray(rhs, dtype=float).reshape(-1)
            if A.shape[0] != rhs.shape[0]:
                raise ValueError(f"{a} has {A.shape[0]} rows but {b} has {rhs.shape[0]}")
            setattr(self, a, A)
            setattr(self, b, rhs)
        self.lb = np.zeros(n) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        if not np.all(np.isfinite(self.lb)):
            raise ValueError("lower bounds must be finite")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass
class LPResult:
    x: np.ndarray | None
    value: float
    status: str  # "optimal" | "infeasible" | "unbounded"
    pivots: int = 0


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    colv = tab[:, col].copy()
    colv[row] = 0.0
    tab -= np.outer(colv, tab[row])


_STALL = 50  # degenerate pivots in a row before switching to Bland's rule


def _run(tab, basis, ncols, tol, max_pivots, count):
    """Pivot on ``tab`` (objective in the last row) until optimal.

    The entering column has the most negative reduced cost. After
    ``_STALL`` consecutive degenerate pivots the smallest-index (Bland)
    rule takes over for both choices, which rules out cycling.
    """
    m = tab.shape[0] - 1
    stall = 0
    while True:
        red = tab[-1, :ncols]
        cand = np.flatnonzero(red < -tol)
        if cand.size == 0:
            return "optimal", count
        bland = stall >= _STALL
        col = cand[0] if bland else cand[np.argmin(red[cand])]
        colv = tab[:m, col]
        pos = colv > tol
        if not pos.any():
            return "unbounded", count
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = ties[np.argmin(basis[ties])] if bland else ties[np.argmax(colv[ties])]
        stall = stall + 1 if best <= tol else 0
        _pivot(tab, row, col)
        basis[row] = col
        count += 1
        if count > max_pivots:
            raise SimplexBreakdown(f"simplex exceeded {max_pivots} pivots")


def simplex_solve(lp: LinearProgram, *, tol: float = 1e-10, max_pivots: int | None = None) -> LPResult:
    """Solve ``lp`` with the two-phase simplex method.

    Pricing is Dantzig's rule; long degenerate stretches fall back to
    Bland's smallest-index rule, so the method cannot cycle. Returns status ``"optimal"``, ``"infeasible"`` or
    ``"unbounded"``.
    """
    n = lp.n
    shift = lp.lb
    finite_ub = np.flatnonzero(np.isfinite(lp.ub))
    A_ub = lp.A_ub
    b_ub = lp.b_ub - A_ub @ shift
    if finite_ub.size:
        bound_rows = np.zeros((finite_ub.size, n))
        bound_rows[np.arange(finite_ub.size), finite_ub] = 1.0
        A_ub = np.vstack([A_ub, bound_rows])
        b_ub = np.concatenate([b_ub, (lp.ub - shift)[finite_ub]])
    A_eq = lp.A_eq
    b_eq = lp.b_eq - A_eq @ shift

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    # columns: structural | slacks | artificials
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    basis = np.full(m, -1)
    # a slack with +1 coefficient and b >= 0 can start in the basis
    for i in range(m_ub):
        if not neg[i]:
            basis[i] = n + i
    need_art = np.flatnonzero(basis < 0)
    n_art = need_art.size
    ncols = n + m_ub + n_art
    if max_pivots is None:
        max_pivots = 50 * (m + ncols) + 1000

    tab = np.zeros((m + 1, ncols + 1))
    tab[:m, : n + m_ub] = A
    tab[:m, -1] = b
    for j, i in enumerate(need_art):
        tab[i, n + m_ub + j] = 1.0
        basis[i] = n + m_ub + j

    pivots = 0
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if n_art:
        tab[-1, :] = 0.0
        tab[-1, n + m_ub :ncols] = 1.0
        for i in need_art:
            tab[-1] -= tab[i]
        status, pivots = _run(tab, basis, ncols, tol, max_pivots, pivots)
        if -tab[-1, -1] > 1e-9 * scale:
            return LPResult(None, np.inf, "infeasible", pivots)
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n + m_ub:
                row = tab[i, : n + m_ub]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    _pivot(tab, i, nz[0])
                    basis[i] = nz[0]
                    pivots += 1
                else:
                    keep[i] = False  # redundant constraint
        tab = np.vstack([tab[:m][keep], tab[-1:]])
        basis = basis[keep]
        tab = np.delete(tab, np.s_[n + m_ub : ncols], axis=1)
        ncols = n + m_ub
        m = tab.shape[0] - 1

    cost = np.zeros(ncols)
    cost[:n] = lp.c
    tab[-1, :] = 0.0
    tab[-1, :ncols] = cost
    tab[-1, :ncols] -= cost[basis] @ tab[:m, :ncols]
    tab[-1, -1] = -cost[basis] @ tab[:m, -1]
    status, pivots = _run(tab, basis, ncols, tol, max_pivots, pivots)
    if status == "unbounded":
        return LPResult(None, -np.inf, "unbounded", pivots)

    y = np.zeros(ncols)
    y[basis] = tab[:m, -1]
    x = shift + np.maximum(y[:n], 0.0)
    return LPResult(x, float(lp.c @ x), "optimal", pivots)

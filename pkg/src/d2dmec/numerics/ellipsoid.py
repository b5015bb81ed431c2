"""Deep-cut ellipsoid method for constrained concave maximization.

The core works on a *batch* of independent problems that share a dimension,
so that many small dual problems can be advanced in lockstep with vectorized
numpy. :func:`ellipsoid_maximize` is the single-problem front end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class EllipsoidBreakdown(RuntimeError):
    """The shape matrix stopped being positive definite."""


class FeasibilityCut(NamedTuple):
    """Query point violates ``a @ y <= b``: ``normal = a``, ``violation = a @ z - b > 0``."""

    normal: np.ndarray
    violation: float


class Evaluation(NamedTuple):
    value: float
    supergradient: np.ndarray


@dataclass
class EllipsoidBatch:
    """Centers ``x`` of shape ``(m, n)`` and shape matrices ``P`` of shape ``(m, n, n)``."""

    x: np.ndarray
    P: np.ndarray

    @classmethod
    def ball(cls, centers, radius):
        x = np.array(centers, dtype=float, ndmin=2)
        m, n = x.shape
        r2 = np.broadcast_to(np.asarray(radius, dtype=float) ** 2, (m,))
        P = np.eye(n)[None, :, :] * r2[:, None, None]
        return cls(x, P)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def norms(self, a, idx):
        """``sqrt(a^T P a)`` for rows ``idx``."""
        Pa = np.einsum("mij,mj->mi", self.P[idx], a)
        return Pa, np.sqrt(np.maximum(np.einsum("mi,mi->m", a, Pa), 0.0))

    def cut(self, idx, a, h, Pa=None, norm=None):
        """Keep ``{y : a @ (y - x) + h <= 0}`` for the ellipsoids in ``idx``.

        ``h >= 0`` gives a deep cut. Returns a boolean array marking rows whose
        cut left (numerically) nothing, i.e. ``h / sqrt(a P a) >= 1``.
        """
        n = self.n
        if Pa is None:
            Pa, norm = self.norms(a, idx)
        bad = ~(norm > 0) | ~np.isfinite(norm)
        if np.any(bad):
            raise EllipsoidBreakdown("degenerate cut: a^T P a is not positive")
        alpha = np.clip(h / norm, 0.0, None)
        empty = alpha >= 1.0
        alpha = np.minimum(alpha, 1.0 - 1e-9)
        g = Pa / norm[:, None]
        step = (1.0 + n * alpha) / (n + 1.0)
        self.x[idx] -= step[:, None] * g
        shrink = n * n / (n * n - 1.0) * (1.0 - alpha**2)
        coef = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha))
        P = self.P[idx] - coef[:, None, None] * np.einsum("mi,mj->mij", g, g)
        P = 0.5 * (P + np.transpose(P, (0, 2, 1)))
        self.P[idx] = shrink[:, None, None] * P
        return empty


BatchOracle = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass
class BatchResult:
    best_x: np.ndarray
    best_value: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    state: EllipsoidBatch
    trace: list = field(default_factory=list)


def ellipsoid_maximize_batch(
    state: EllipsoidBatch,
    oracle: BatchOracle,
    *,
    eps: float = 1e-6,
    max_iter: int | None = None,
    best_x=None,
    best_value=None,
    stop: Callable | None = None,
    check_every: int = 0,
    record_trace: bool = False,
) -> BatchResult:
    """Run deep-cut ellipsoid iterations on every problem in ``state``.

    ``oracle(X, idx)`` receives the current centers ``X`` for problem
    indices ``idx`` and returns ``(feasible, value, vec, violation)``:
    for feasible rows ``vec`` is a supergradient and ``value`` the objective;
    for infeasible rows ``vec`` is the normal ``a`` of a violated constraint
    ``a @ y <= b`` and ``violation = a @ x - b > 0``.

    A problem stops once it is certified ``eps``-optimal: the best value is
    within ``eps`` of the upper bound ``g(x) + sqrt(s^T P s)`` (which also
    covers ``sqrt(s^T P s) <= eps``). ``stop(best_x, best_value, idx)`` is
    called every ``check_every`` iterations and may mark extra problems
    finished, e.g. once a primal certificate is available.
    """
    m, n = state.x.shape
    if max_iter is None:
        max_iter = 200 * n * n
    if best_x is None:
        best_x = state.x.copy()
        best_value = np.full(m, -np.inf)
    else:
        best_x = np.array(best_x, dtype=float)
        best_value = np.array(best_value, dtype=float)
    iters = np.zeros(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    trace = []

    for it in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        feas, val, vec, viol = oracle(state.x[idx], idx)
        iters[idx] += 1

        a = np.where(feas[:, None], -vec, vec)
        Pa, norm = state.norms(a, idx)
        if np.any(~(norm > 0) | ~np.isfinite(norm)):
            zero = feas & (norm == 0)
            if np.any(~zero & (~(norm > 0) | ~np.isfinite(norm))):
                raise EllipsoidBreakdown("shape matrix lost positive definiteness")
            # zero supergradient: the center is optimal
            hit = idx[zero]
            better = val[zero] > best_value[hit]
            best_value[hit[better]] = val[zero][better]
            best_x[hit[better]] = state.x[hit[better]]
            converged[hit] = True
            active[hit] = False
            keep = ~zero
            idx, feas, val, a, Pa, norm, viol = (
                idx[keep], feas[keep], val[keep], a[keep], Pa[keep], norm[keep], viol[keep]
            )
            if idx.size == 0:
                continue

        fi = idx[feas]
        better = val[feas] > best_value[fi]
        best_value[fi[better]] = val[feas][better]
        best_x[fi[better]] = state.x[fi[better]]

        h = np.where(feas, best_value[idx] - np.where(feas, val, 0.0), viol)
        upper = np.where(feas, val + norm, np.inf)
        done = feas & (upper - best_value[idx] <= eps)

        cut_rows = ~done
        if np.any(cut_rows):
            empty = state.cut(idx[cut_rows], a[cut_rows], h[cut_rows], Pa[cut_rows], norm[cut_rows])
            # An empty cut means no feasible point beats the incumbent inside
            # the ellipsoid, i.e. the incumbent is optimal to working precision.
            emp = np.flatnonzero(cut_rows)[empty]
            lost = emp[~np.isfinite(best_value[idx[emp]])]
            if lost.size:
                raise EllipsoidBreakdown("no feasible point found before the ellipsoid collapsed")
            done[emp] = True
        converged[idx[done]] = True
        active[idx[done]] = False

        if record_trace:
            trace.append(best_value.copy())
        if stop is not None and check_every and (it + 1) % check_every == 0:
            idx = np.flatnonzero(active & np.isfinite(best_value))
            if idx.size:
                fin = stop(best_x[idx], best_value[idx], idx)
                converged[idx[fin]] = True
                active[idx[fin]] = False

    return BatchResult(best_x, best_value, iters, converged, state, trace)


@dataclass
class EllipsoidResult:
    point: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: list
    state: EllipsoidBatch


def ellipsoid_maximize(
    n: int,
    initial_radius: float,
    oracle: Callable[[np.ndarray], FeasibilityCut | Evaluation],
    eps: float = 1e-6,
    max_iter: int | None = None,
    *,
    center=None,
    state: EllipsoidBatch | None = None,
    best=None,
) -> EllipsoidResult:
    """Maximize a concave function over a convex set given by a cut oracle.

    ``oracle(z)`` returns :class:`FeasibilityCut` when ``z`` is outside the
    domain and :class:`Evaluation` otherwise. The search starts from the ball
    of ``initial_radius`` around ``center`` (default origin), or resumes from
    ``state``/``best`` of a previous run.

    Returns the best feasible point, its value, and the trace of best values,
    which is non-decreasing by construction.
    """
    if state is None:
        c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        state = EllipsoidBatch.ball(c[None, :], initial_radius)

    def batch(X, idx):
        out = oracle(X[0].copy())
        if isinstance(out, FeasibilityCut):
            return (np.array([False]), np.array([0.0]), np.asarray(out.normal, float)[None, :],
                    np.array([float(out.violation)]))
        return (np.array([True]), np.array([float(out.value)]), np.asarray(out.supergradient, float)[None, :],
                np.array([0.0]))

    bx, bv = (None, None) if best is None else (np.asarray(best[0])[None, :], np.array([best[1]]))
    res = ellipsoid_maximize_batch(state, batch, eps=eps, max_iter=max_iter, best_x=bx, best_value=bv,
                                   record_trace=True)
    trace = [float(t[0]) for t in res.trace]
    return EllipsoidResult(res.best_x[0], float(res.best_value[0]), int(res.iterations[0]),
                           bool(res.converged[0]), trace, res.state)


def log_volume(P) -> float:
    """Log-determinant of a shape matrix (volume up to a constant)."""
    sign, logdet = np.linalg.slogdet(P)
    return logdet if sign > 0 else -math.inf

"""Optimal time, rate and frequency allocation for a fixed task assignment.

The allocation problem is convex once the assignment is fixed. It is solved
through its Lagrangian dual: for any interior multiplier vector the inner
minimization has a closed form (optimal rates via Lambert W, optimal DVFS
frequencies via a cube root), and the outer concave maximization runs on a
deep-cut ellipsoid. A primal allocation is recovered from the best dual
point and certified against the dual bound.

Multiplier layout (``n = 3K + 3``)::

    [eta, beta0, lambda0, zeta0, lambda_1..lambda_K, beta_2..beta_K, zeta_1..zeta_K]

``eta`` prices "offloading ends before helper 1 finishes computing",
``beta_k`` the deadline of helper ``k``, ``beta0`` the local deadline,
``lambda`` the energy budgets and ``zeta`` the frequency caps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Allocation,
    Scenario,
    SchemeResult,
    canonicalize_arrays,
    comm_energy_floor,
    device_energies,
    device_loads,
    is_binary,
    latency_arrays,
    rate_fn,
)
from .numerics.ellipsoid import EllipsoidBatch, ellipsoid_maximize_batch
from .numerics.lambertw import tilde_f

DELTA = 1e-12  # smallest admissible coefficient / price on the dual domain
GAP_TOL = 1e-4
_GAP_STOP = 5e-5


class DualDomainError(ValueError):
    """Multipliers outside the region where the inner minimum is finite."""


# ---------------------------------------------------------------------------
# dual points


def dual_dim(K: int) -> int:
    return 3 * K + 3


def _slices(K):
    return {
        "eta": 0,
        "beta0": 1,
        "lambda0": 2,
        "zeta0": 3,
        "lam": slice(4, 4 + K),
        "beta": slice(4 + K, 3 + 2 * K),
        "zeta": slice(3 + 2 * K, 3 + 3 * K),
    }


def coefficients(Z, K):
    """Time coefficients ``(A, B, D, c0)`` of the Lagrangian at stacked duals ``Z``.

    ``A``, ``B``, ``D`` have shape ``(..., K)``; they multiply download,
    helper compute and offload times. ``c0`` multiplies local compute time.
    """
    Z = np.asarray(Z, dtype=float)
    s = _slices(K)
    eta, beta0, zeta0 = Z[..., s["eta"]], Z[..., s["beta0"]], Z[..., s["zeta0"]]
    beta, zeta = Z[..., s["beta"]], Z[..., s["zeta"]]
    # tail[k] = sum of beta_j over helpers j > k (1-based j >= 2)
    tail = np.flip(np.cumsum(np.flip(beta, -1), -1), -1)
    zero = np.zeros(Z.shape[:-1] + (1,))
    after = np.concatenate([tail, zero], -1)  # sum_{j > k}
    A = 1.0 - beta0[..., None] - after
    B1 = 1.0 - eta - beta0 - beta.sum(-1) - zeta[..., 0]
    B = np.concatenate([B1[..., None], beta - zeta[..., 1:]], -1)
    D = np.concatenate([(1.0 - beta0)[..., None], eta[..., None] + tail], -1)
    return A, B, D, beta0 - zeta0


def domain_constraints(K):
    """Dual domain as ``G z <= h``.

    Rows: ``A, B, D, c0 >= DELTA``, prices ``lambda >= DELTA``, every other
    multiplier ``>= 0``.
    """
    n = dual_dim(K)

    def flat(Z):
        A, B, D, c0 = coefficients(Z, K)
        return np.concatenate([A, B, D, c0[..., None]], -1)

    base = flat(np.zeros(n))
    M = flat(np.eye(n)) - base  # column i is the response to unit multiplier i
    s = _slices(K)
    lam_idx = np.r_[s["lambda0"], np.arange(n)[s["lam"]]]
    lower = np.zeros(n)
    lower[lam_idx] = DELTA
    G = np.vstack([-M.T, -np.eye(n)])
    h = np.concatenate([base - DELTA, -lower])
    return G, h


@dataclass(frozen=True)
class DualPoint:
    """Lagrange multipliers of the allocation problem (see module docstring)."""

    eta: float
    beta0: float
    lambda0: float
    zeta0: float
    lam: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        for name in ("lam", "beta", "zeta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if self.beta.shape[0] != self.K - 1 or self.zeta.shape[0] != self.K:
            raise ValueError("need K prices, K-1 deadline multipliers and K cap multipliers")

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def from_vector(cls, z, K: int) -> "DualPoint":
        z = np.asarray(z, dtype=float)
        if z.shape != (dual_dim(K),):
            raise ValueError(f"dual vector must have length {dual_dim(K)}")
        s = _slices(K)
        return cls(z[0], z[1], z[2], z[3], z[s["lam"]], z[s["beta"]], z[s["zeta"]])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.eta, self.beta0, self.lambda0, self.zeta0], self.lam, self.beta, self.zeta])

    @property
    def A(self):
        return coefficients(self.to_vector(), self.K)[0]

    @property
    def B(self):
        return coefficients(self.to_vector(), self.K)[1]

    @property
    def D(self):
        return coefficients(self.to_vector(), self.K)[2]

    @property
    def c0(self) -> float:
        return float(coefficients(self.to_vector(), self.K)[3])

    def is_interior(self) -> bool:
        G, h = domain_constraints(self.K)
        return bool(np.all(G @ self.to_vector() <= h))


# ---------------------------------------------------------------------------
# closed forms


@dataclass(frozen=True)
class UnitSolution:
    """Per-device optimal rates and frequencies at a dual point (stacked)."""

    r_off: np.ndarray
    r_dl: np.ndarray
    freq: np.ndarray
    freq0: np.ndarray


def unit_solution(scn: Scenario, Z) -> UnitSolution:
    """Optimal offload/download rates and compute frequencies at duals ``Z``.

    Rates are ``tilde_f(D hbar / lambda0)`` and ``tilde_f(A gbar / lambda_k)``;
    frequencies ``cbrt(B / (2 lambda kappa))``. Nonpositive coefficients give
    zero rate/frequency (infinite time).
    """
    K = scn.K
    Z = np.asarray(Z, dtype=float)
    s = _slices(K)
    A, B, D, c0 = coefficients(Z, K)
    lam0 = Z[..., s["lambda0"]]
    lam = Z[..., s["lam"]]
    with np.errstate(divide="ignore", invalid="ignore"):
        y_off = np.where(lam0[..., None] > 0, np.maximum(D, 0.0) * scn.hbar / lam0[..., None], np.inf)
        y_dl = np.where(lam > 0, np.maximum(A, 0.0) * scn.gbar / lam, np.inf)
        freq = np.cbrt(np.maximum(B, 0.0) / (2.0 * lam * scn.kappa))
        freq0 = np.cbrt(np.maximum(c0, 0.0) / (2.0 * lam0 * scn.kappa0))
    y = np.concatenate([y_off, y_dl], -1)
    r = tilde_f(np.where(np.isfinite(y), y, 0.0), scn.B)
    r_off, r_dl = r[..., :K], r[..., K:]
    r_off = np.where(np.isfinite(y_off), r_off, np.inf)
    r_dl = np.where(np.isfinite(y_dl), r_dl, np.inf)
    return UnitSolution(np.asarray(r_off), np.asarray(r_dl), np.asarray(freq), np.asarray(freq0))


def _div(work, speed):
    """``work / speed`` with 0 for zero work and inf for zero speed."""
    work, speed = np.broadcast_arrays(np.asarray(work, dtype=float), np.asarray(speed, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(work > 0, work / speed, 0.0)
    return out


@dataclass(frozen=True)
class ClosedFormTimes:
    """Minimizers of the Lagrangian in the slot durations.

    Entries are ``inf`` where the matching coefficient is not positive and
    the slot carries a payload; ``interior`` tells whether the dual point
    lies strictly inside the dual domain.
    """

    t_off: np.ndarray
    t_dl: np.ndarray
    t_c: np.ndarray
    t0_c: float
    interior: bool

    def allocation(self) -> Allocation:
        return Allocation(self.t_off, self.t_dl, self.t_c, self.t0_c)


def closed_form_times(scn: Scenario, pi, dual) -> ClosedFormTimes:
    """Slot durations minimizing the Lagrangian at ``dual`` for assignment ``pi``."""
    z = dual.to_vector() if isinstance(dual, DualPoint) else np.asarray(dual, dtype=float)
    b_off, b_dl, cyc, cyc0 = device_loads(scn, pi)
    u = unit_solution(scn, z)
    G, h = domain_constraints(scn.K)
    return ClosedFormTimes(
        _div(b_off, u.r_off),
        _div(b_dl, u.r_dl),
        _div(cyc, u.freq),
        float(_div(cyc0, u.freq0)),
        bool(np.all(G @ z <= h)),
    )


def residuals(scn: Scenario, loads, t_off, t_dl, t_c, t0_c, freqs=None):
    """Constraint residuals ``(m, 3K+3)`` in dual-vector order plus the objective.

    ``loads`` are stacked ``(b_off, b_dl, cyc, cyc0)``. With ``freqs`` given
    (fixed-frequency evaluation) computation energy uses those frequencies.
    A residual is the left side minus the right side of a ``<= 0`` constraint,
    which is also the supergradient of the dual function.
    """
    K = scn.K
    b_off, b_dl, cyc, cyc0 = loads
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        e_off = np.where(b_off > 0, rate_fn(_div(b_off, t_off), scn.B) * t_off / scn.hbar, 0.0)
        e_dl = np.where(b_dl > 0, rate_fn(_div(b_dl, t_dl), scn.B) * t_dl / scn.gbar, 0.0)
        e_c = np.where(cyc > 0, scn.kappa * cyc**3 / np.where(cyc > 0, t_c, 1.0) ** 2, 0.0)
        e0_c = np.where(cyc0 > 0, scn.kappa0 * cyc0**3 / np.where(cyc0 > 0, t0_c, 1.0) ** 2, 0.0)
    head = t_off[..., 0] + t_c[..., 0]
    n = dual_dim(K)
    res = np.empty(np.shape(t0_c) + (n,))
    s = _slices(K)
    res[..., 0] = t_off.sum(-1) - head
    res[..., 1] = t0_c - head - t_dl.sum(-1)
    res[..., 2] = e_off.sum(-1) + e0_c - scn.E0
    res[..., 3] = cyc0 / scn.f0max - t0_c
    res[..., s["lam"]] = e_dl + e_c - scn.E
    dl_before = np.cumsum(t_dl, -1) - t_dl  # sum_{j<k}
    off_upto = np.cumsum(t_off, -1)
    res[..., s["beta"]] = (t_c - head[..., None] - dl_before + off_upto)[..., 1:]
    res[..., s["zeta"]] = cyc / scn.fmax - t_c
    obj = head + t_dl.sum(-1)
    return res, obj


def _lagrangian_parts(scn, loads, Z):
    """Closed-form times, objective and residuals at stacked interior duals."""
    u = unit_solution(scn, Z)
    b_off, b_dl, cyc, cyc0 = loads
    t_off = _div(b_off, u.r_off)
    t_dl = _div(b_dl, u.r_dl)
    t_c = _div(cyc, u.freq)
    t0_c = _div(cyc0, u.freq0)
    res, obj = residuals(scn, loads, t_off, t_dl, t_c, t0_c)
    return (t_off, t_dl, t_c, t0_c), obj, res


def dual_value_p2(scn: Scenario, pi, dual, *, with_supergradient=False):
    """Dual function of the allocation problem at an interior ``dual``.

    Equals the Lagrangian evaluated at :func:`closed_form_times`. Optionally
    returns the supergradient (constraint residuals) too.
    """
    z = dual.to_vector() if isinstance(dual, DualPoint) else np.asarray(dual, dtype=float)
    G, h = domain_constraints(scn.K)
    if np.any(G @ z > h):
        raise DualDomainError("dual point is not interior; needs a feasibility cut")
    loads = device_loads(scn, pi)
    _, obj, res = _lagrangian_parts(scn, loads, z)
    val = float(obj + res @ z)
    return (val, res) if with_supergradient else val


# ---------------------------------------------------------------------------
# primal side


def _scale_to_budget(energy_of, budget, hi0=1.0):
    """Smallest ``s >= 1`` (to about 1e-12 relative) with ``energy_of(s) <= budget``, vectorized.

    ``energy_of`` must be non-increasing in ``s`` and tend to a value below
    ``budget``. The root of ``log(energy / budget)`` in ``log s`` is
    bracketed by doubling and then found by Illinois regula falsi; the
    returned point is always on the feasible side.
    """
    budget = np.asarray(budget, dtype=float)
    lo = np.ones_like(budget)
    e_lo = energy_of(lo)
    ok = e_lo <= budget
    if ok.all():
        return lo
    hi = np.where(ok, 1.0, 2.0 * np.maximum(hi0, 1.0))
    e_hi = energy_of(hi)
    for _ in range(200):
        bad = ~ok & ~(e_hi <= budget)
        if not bad.any():
            break
        lo = np.where(bad, hi, lo)
        e_lo = np.where(bad, e_hi, e_lo)
        hi = np.where(bad, hi * 4.0, hi)
        e_hi = energy_of(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_lo, x_hi = np.log(lo), np.log(hi)
        f_lo = np.log(e_lo / budget)
        f_hi = np.log(np.maximum(e_hi, 1e-300) / budget)
    side = np.zeros(budget.shape, dtype=int)
    todo = ~ok
    for _ in range(100):
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(np.isfinite(f_lo) & (f_lo > f_hi), (x_lo * f_hi - x_hi * f_lo) / (f_hi - f_lo), 0.5 * (x_lo + x_hi))
        x = np.where(todo & (x > x_lo) & (x < x_hi), x, 0.5 * (x_lo + x_hi))
        with np.errstate(divide="ignore"):
            f = np.log(np.maximum(energy_of(np.exp(x)), 1e-300) / budget)
        good = f <= 0
        upd_hi = todo & good
        upd_lo = todo & ~good
        x_hi = np.where(upd_hi, x, x_hi)
        f_hi = np.where(upd_hi, f, f_hi)
        x_lo = np.where(upd_lo, x, x_lo)
        f_lo = np.where(upd_lo, f, f_lo)
        # Illinois step: halve the stale end's value when the same side moves twice
        f_lo = np.where(upd_hi & (side == 1), 0.5 * f_lo, f_lo)
        f_hi = np.where(upd_lo & (side == -1), 0.5 * f_hi, f_hi)
        side = np.where(upd_hi, 1, np.where(upd_lo, -1, side))
        todo = todo & (x_hi - x_lo > 1e-13) & ~(good & (f > -1e-13))
        if not todo.any():
            break
    return np.where(ok, 1.0, np.exp(x_hi))


def _comm_energy_arr(bits, t, gain, B):
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return np.where(bits > 0, rate_fn(_div(bits, t), B) * t / gain, 0.0)


def repair_energy(scn: Scenario, loads, t_off, t_dl, t_c, t0_c, freqs=None):
    """Stretch each device's slots uniformly until its energy budget holds.

    Works on stacked arrays. With ``freqs`` (fixed-frequency mode) only the
    communication slots stretch and computation energy is a constant.
    Returns new ``(t_off, t_dl, t_c, t0_c)``.
    """
    b_off, b_dl, cyc, cyc0 = loads
    if freqs is None:
        e0c = lambda s: np.where(cyc0 > 0, scn.kappa0 * cyc0**3 / (s * np.where(cyc0 > 0, t0_c, 1.0)) ** 2, 0.0)
        ekc = lambda s: np.where(cyc > 0, scn.kappa * cyc**3 / (s[..., None] * np.where(cyc > 0, t_c, 1.0)) ** 2, 0.0)
    else:
        f = np.asarray(freqs, dtype=float)
        e0c_const = scn.kappa0 * cyc0 * f[..., -1] ** 2
        ekc_const = scn.kappa * cyc * f[..., :-1] ** 2
        e0c = lambda s: e0c_const
        ekc = lambda s: ekc_const

    def local(s):
        return _comm_energy_arr(b_off, s[..., None] * t_off, scn.hbar, scn.B).sum(-1) + e0c(s)

    s0 = _scale_to_budget(local, np.broadcast_to(scn.E0, np.shape(t0_c)))
    t_off = t_off * s0[..., None]
    if freqs is None:
        t0_c = t0_c * s0

    # helpers are independent, so solve them as one flat batch
    flat_shape = t_dl.shape
    budgets = np.broadcast_to(scn.E, flat_shape)

    def helper(s):
        s = s.reshape(flat_shape)
        e = _comm_energy_arr(b_dl, s * t_dl, scn.gbar, scn.B)
        if freqs is None:
            e = e + np.where(cyc > 0, scn.kappa * cyc**3 / (s * np.where(cyc > 0, t_c, 1.0)) ** 2, 0.0)
        else:
            e = e + ekc(None)
        return e.reshape(-1)

    sk = _scale_to_budget(helper, budgets.reshape(-1)).reshape(flat_shape)
    t_dl = t_dl * sk
    if freqs is None:
        t_c = t_c * sk
    return t_off, t_dl, t_c, t0_c


_SNAP = 1e-2  # frequencies this close to their cap are also tried at the cap


def _finish(scn, loads, t_off, t_dl, t_c, t0_c):
    t_off, t_dl, t_c, t0_c = repair_energy(scn, loads, t_off, t_dl, t_c, t0_c)
    t_dl, t_c = canonicalize_arrays(t_off, t_dl, t_c, t0_c)
    return (t_off, t_dl, t_c, t0_c), latency_arrays(t_off, t_dl, t_c, t0_c)


def _recover(scn, loads, Z):
    """Feasible allocation from stacked duals: closed forms, caps, energy repair, idle padding.

    An approximate dual leaves capped CPUs a hair below their cap, which
    costs latency linearly, so a second candidate with those CPUs snapped
    to the cap is built and the better one kept.
    """
    b_off, b_dl, cyc, cyc0 = loads
    (t_off, t_dl, t_c, t0_c), _, _ = _lagrangian_parts(scn, loads, Z)
    c_min, c0_min = cyc / scn.fmax, cyc0 / scn.f0max
    t_c = np.maximum(t_c, c_min)
    t0_c = np.maximum(t0_c, c0_min)
    times, lat = _finish(scn, loads, t_off, t_dl, t_c, t0_c)
    snap_c = np.where(t_c <= c_min * (1 + _SNAP), c_min, t_c)
    snap_0 = np.where(t0_c <= c0_min * (1 + _SNAP), c0_min, t0_c)
    times2, lat2 = _finish(scn, loads, t_off, t_dl, snap_c, snap_0)
    use = lat2 < lat
    times = tuple(np.where(use.reshape(use.shape + (1,) * (a.ndim - use.ndim)), b, a) for a, b in zip(times, times2))
    return times, np.where(use, lat2, lat)


def baseline_allocation(scn: Scenario, loads):
    """A feasible (generally poor) allocation used as a scale and as a fallback.

    Every link starts at 20 bit/s/Hz and every CPU at its cap, then each
    device is slowed uniformly until it meets its budget.
    """
    b_off, b_dl, cyc, cyc0 = loads
    r = 20.0 * scn.B
    t_off = b_off / r
    t_dl = b_dl / r
    t_c = cyc / scn.fmax
    t0_c = cyc0 / scn.f0max
    return _finish(scn, loads, t_off, t_dl, t_c, t0_c)


def energy_floors(scn: Scenario, loads):
    """Energy each device needs as every slot grows without bound: ``(local, helpers)``."""
    b_off, b_dl, _, _ = loads
    return comm_energy_floor(b_off, scn.hbar, scn.B).sum(-1), comm_energy_floor(b_dl, scn.gbar, scn.B)


# ---------------------------------------------------------------------------
# batched dual solver


class _P2Problem:
    """Stacked allocation problems for one scenario and ``m`` assignments.

    The ellipsoid runs on rescaled multipliers ``z~``: energy prices are
    measured in units of ``T_ref / E_avail`` and the objective in units of
    ``T_ref``, which makes the dual well conditioned regardless of the
    physical magnitudes.
    """

    def __init__(self, scn: Scenario, pis):
        self.scn = scn
        self.K = K = scn.K
        self.n = dual_dim(K)
        self.loads = device_loads(scn, pis)
        floor0, floor = energy_floors(scn, self.loads)
        self.avail0 = scn.E0 - floor0
        self.avail = scn.E - floor
        m = self.avail0.shape[0]
        self.feasible = (self.avail0 > 0) & np.all(self.avail > 0, -1)
        self.T_ref = np.full(m, np.nan)
        self.base = None
        self.base_latency = np.full(m, np.inf)
        ok = np.flatnonzero(self.feasible)
        if ok.size:
            sub = tuple(a[ok] for a in self.loads)
            times, lat = baseline_allocation(scn, sub)
            self.base = [np.zeros((m,) + np.shape(t)[1:]) for t in times]
            for b, t in zip(self.base, times):
                b[ok] = t
            self.base_latency[ok] = lat
            self.T_ref[ok] = lat
        s = _slices(K)
        self.scale = np.ones((m, self.n))
        with np.errstate(divide="ignore", invalid="ignore"):
            self.scale[:, s["lambda0"]] = self.T_ref / self.avail0
            self.scale[:, s["lam"]] = self.T_ref[:, None] / self.avail
        self.G, self.h = domain_constraints(K)

    def sub_loads(self, idx):
        return tuple(a[idx] for a in self.loads)

    def recover(self, loads, Z):
        return _recover(self.scn, loads, Z)

    def oracle(self, Zt, idx):
        S = self.scale[idx]
        Z = Zt * S
        viol = Z @ self.G.T - self.h
        GS = self.G[None, :, :] * S[:, None, :]
        norms = np.linalg.norm(GS, axis=-1)
        score = viol / norms
        worst = np.argmax(score, -1)
        rows = np.arange(idx.size)
        infeasible = score[rows, worst] > 0
        vec = np.empty_like(Zt)
        val = np.zeros(idx.size)
        v = np.zeros(idx.size)
        if infeasible.any():
            vec[infeasible] = GS[rows, worst][infeasible]
            v[infeasible] = viol[rows, worst][infeasible]
        ok = ~infeasible
        if ok.any():
            loads = tuple(a[idx[ok]] for a in self.loads)
            _, obj, res = _lagrangian_parts(self.scn, loads, Z[ok])
            T = self.T_ref[idx[ok]]
            val[ok] = (obj + np.einsum("mi,mi->m", res, Z[ok])) / T
            vec[ok] = res * S[ok] / T[:, None]
        return ok, val, vec, v


def _result(scn, pi, times, latency, status, diag, scheme="p2"):
    t_off, t_dl, t_c, t0_c = times
    alloc = Allocation(t_off, t_dl, t_c, t0_c)
    b_off, b_dl, cyc, cyc0 = device_loads(scn, pi)
    freq = np.append(np.where(cyc > 0, cyc / np.where(t_c > 0, t_c, 1.0), 0.0), cyc0 / t0_c if cyc0 > 0 else 0.0)
    return SchemeResult(
        scheme=scheme,
        status=status,
        assignment=np.asarray(pi, dtype=float),
        allocation=alloc,
        latency=float(latency),
        energy=device_energies(scn, pi, alloc),
        frequency=freq,
        diagnostics=diag,
    )


def run_dual_batch(prob, *, eps, gap_tol, max_iter, check_every, refinements):
    """Ellipsoid on every feasible instance of ``prob`` with periodic primal recovery.

    ``prob`` supplies ``n``, ``feasible``, ``base``/``base_latency`` (a
    feasible fallback), ``T_ref``, ``scale``, ``oracle``, ``sub_loads`` and
    ``recover``. Returns ``(best_times, best_latency, dual_bound, gap,
    iterations)`` over all instances.
    """
    m, n = prob.feasible.shape[0], prob.n
    if max_iter is None:
        max_iter = 200 * n * n
    best_lat = prob.base_latency.copy()
    best_times = [b.copy() for b in prob.base] if prob.base is not None else None
    dual = np.full(m, -np.inf)
    gap = np.full(m, np.inf)
    iters = np.zeros(m, dtype=int)

    live = np.flatnonzero(prob.feasible)
    if live.size == 0:
        return best_times, best_lat, dual, gap, iters
    state = EllipsoidBatch.ball(np.full((live.size, n), 0.1), math.sqrt(100.0 * n))
    bx = state.x.copy()
    bv = np.full(live.size, -np.inf)

    def update(best_x, best_value, local):
        gl = live[local]
        Z = best_x * prob.scale[gl]
        times, lat = prob.recover(prob.sub_loads(gl), Z)
        better = lat < best_lat[gl]
        for bt, t in zip(best_times, times):
            bt[gl[better]] = t[better]
        best_lat[gl[better]] = lat[better]
        dual[gl] = np.maximum(dual[gl], best_value * prob.T_ref[gl])
        gap[gl] = (best_lat[gl] - dual[gl]) / best_lat[gl]
        return gap[gl] <= 0.5 * gap_tol

    active = np.arange(live.size)
    cur_eps = eps
    for _ in range(refinements + 1):
        sub = EllipsoidBatch(state.x[active], state.P[active])

        def oracle(X, idx, _map=active):
            return prob.oracle(X, live[_map[idx]])

        def stop(best_x, best_value, idx, _map=active):
            return update(best_x, best_value, _map[idx])

        res = ellipsoid_maximize_batch(
            sub, oracle, eps=cur_eps, max_iter=max_iter, best_x=bx[active], best_value=bv[active],
            stop=stop, check_every=check_every,
        )
        state.x[active], state.P[active] = res.state.x, res.state.P
        bx[active], bv[active] = res.best_x, res.best_value
        iters[live[active]] += res.iterations
        update(res.best_x, res.best_value, active)
        active = active[gap[live[active]] > gap_tol]
        if active.size == 0:
            break
        cur_eps /= 100.0
    return best_times, best_lat, dual, gap, iters


def _menu_primal(scn, pi, times, T_ref):
    """Improve a primal by speed-menu LPs with the assignment pinned.

    At degenerate dual points (a price and its time coefficient both near
    zero) the closed forms leave some rate undetermined and primal recovery
    stalls above the bound. The menu LP needs no dual information. Starting
    from the speeds realized by ``times`` it shrinks the menu spread, and each
    solution is made exactly feasible by :func:`_finish`.
    """
    from .relax import solve_lp2_menu  # relax builds on this module

    loads = device_loads(scn, pi)
    b_off, b_dl, cyc, cyc0 = loads
    best_times, best_lat = times, float(latency_arrays(*times))
    for spread in (8.0, 2.0, 1.25):
        t_off, t_dl, t_c, t0_c = best_times
        with np.errstate(divide="ignore", invalid="ignore"):
            speeds = (
                np.where(b_off > 0, b_off / t_off, 1.0),
                np.where(b_dl > 0, b_dl / t_dl, 1.0),
                np.where(cyc > 0, cyc / t_c, scn.fmax),
                float(cyc0 / t0_c) if cyc0 > 0 else float(scn.f0max),
            )
        menu = solve_lp2_menu(scn, speeds, T_ref, spread=spread, assignment=pi)
        if menu is None:
            continue
        t_off, t_dl, t_c, t0_c = menu[1]
        cand, lat = _finish(scn, loads, np.asarray(t_off), np.asarray(t_dl), np.asarray(t_c), float(t0_c))
        if lat < best_lat:
            best_times, best_lat = cand, float(lat)
    return best_times, best_lat


def solve_p2_batch(
    scn: Scenario,
    assignments,
    *,
    eps: float = 1e-6,
    gap_tol: float = GAP_TOL,
    max_iter: int | None = None,
    check_every: int = 20,
    refinements: int = 2,
    scheme: str = "p2",
) -> list[SchemeResult]:
    """Solve the allocation problem for a stack of assignments at once (fractional ones allowed).

    Each instance stops when its primal/dual gap falls below half of
    ``gap_tol`` or the ellipsoid certifies ``eps``-optimality of the dual.
    Instances still above ``gap_tol`` are resumed up to ``refinements`` times
    with ``eps`` divided by 100. Status is ``optimal`` when the final relative
    gap is within ``gap_tol``, ``suboptimal`` otherwise, and ``infeasible``
    when some budget does not even cover the communication energy floor.
    """
    pis = np.asarray(assignments, dtype=float)
    if pis.ndim == 2:
        pis = pis[None]
    if pis.shape[1:] != (scn.L, scn.K + 1):
        raise ValueError(f"assignments must have shape (m, {scn.L}, {scn.K + 1})")
    prob = _P2Problem(scn, pis)
    best_times, best_lat, dual, gap, iters = run_dual_batch(
        prob, eps=eps, gap_tol=gap_tol, max_iter=max_iter, check_every=check_every, refinements=refinements
    )
    m = pis.shape[0]

    out = []
    for i in range(m):
        if not prob.feasible[i]:
            out.append(SchemeResult(scheme=scheme, status="infeasible", assignment=pis[i],
                                    diagnostics={"reason": "energy budget below communication floor"}))
            continue
        times = tuple(t[i] for t in best_times)
        lat, g = best_lat[i], gap[i]
        diag = {"dual_bound": float(dual[i]), "iterations": int(iters[i])}
        if g > gap_tol:
            times, menu_lat = _menu_primal(scn, pis[i], times, prob.T_ref[i])
            if menu_lat < lat:
                lat, g = menu_lat, (menu_lat - dual[i]) / menu_lat
                diag["menu_primal"] = True
        diag["gap"] = float(g)
        status = "optimal" if g <= gap_tol else "suboptimal"
        out.append(_result(scn, pis[i], times, lat, status, diag, scheme))
    return out


def solve_p2(scn: Scenario, assignment, **kw) -> SchemeResult:
    """Optimal allocation for one binary assignment (see :func:`solve_p2_batch`)."""
    pi = np.asarray(assignment, dtype=float)
    if not is_binary(pi):
        raise ValueError("solve_p2 needs a binary assignment")
    return solve_p2_batch(scn, pi[None], **kw)[0]

"""Convex relaxation of the joint assignment/allocation problem and its rounding.

The binary assignment is relaxed to a row-stochastic matrix with every
column summing to at least one. For fixed multipliers the Lagrangian then
splits into the per-unit allocation closed forms (shared with
:mod:`d2dmec.allocator`) and a small linear program in the assignment
(LP1) whose cost matrix is :func:`phi_coefficients`. The dual is maximized
with the ellipsoid method. A fractional primal is read off by a second LP
(LP2) at the dual-optimal rates and frequencies, rounded, repaired so every
device gets a task, and finally re-optimized with :func:`allocator.solve_p2`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .allocator import (
    _slices,
    coefficients,
    domain_constraints,
    dual_dim,
    residuals,
    solve_p2,
    solve_p2_batch,
    unit_solution,
)
from .model import Allocation, Scenario, SchemeResult, device_loads, local_execution_latency, rate_fn
from .numerics.ellipsoid import EllipsoidBatch, ellipsoid_maximize_batch
from .numerics.simplex import LinearProgram, simplex_solve

P1_GAP_TOL = 1e-3
LP2_RELAX = 1e-7


# ---------------------------------------------------------------------------
# assignment LPs


def assignment_constraints(L: int, K: int):
    """Rows-sum-to-one equalities and columns-at-least-one inequalities on ``vec(pi)``."""
    n = L * (K + 1)
    A_eq = np.zeros((L, n))
    for l in range(L):
        A_eq[l, l * (K + 1) : (l + 1) * (K + 1)] = 1.0
    A_ub = np.zeros((K + 1, n))
    for k in range(K + 1):
        A_ub[k, k :: K + 1] = -1.0
    return A_eq, np.ones(L), A_ub, -np.ones(K + 1)


def unit_costs(scn: Scenario, z):
    """Lagrangian cost per input bit, output bit and cycle on each device at dual ``z``.

    Returns ``(c_T, c_R, c_C, c_0)``: the first three per helper, the last
    for local computing.
    """
    K = scn.K
    s = _slices(K)
    z = np.asarray(z, dtype=float)
    A, B, D, c0 = coefficients(z, K)
    lam0, lam = z[s["lambda0"]], z[s["lam"]]
    u = unit_solution(scn, z)
    a = math.log(2.0) / scn.B
    # f(r)/r with its r -> 0 limit
    per_bit = lambda r: np.where(r > 0, rate_fn(r, scn.B) / np.where(r > 0, r, 1.0), a)
    c_T = D / u.r_off + lam0 * per_bit(u.r_off) / scn.hbar
    c_R = A / u.r_dl + lam * per_bit(u.r_dl) / scn.gbar
    c_C = B / u.freq + lam * scn.kappa * u.freq**2 + z[s["zeta"]] / scn.fmax
    c_0 = c0 / u.freq0 + lam0 * scn.kappa0 * u.freq0**2 + z[s["zeta0"]] / scn.f0max
    return c_T, c_R, c_C, float(c_0)


def phi_coefficients(scn: Scenario, dual) -> np.ndarray:
    """Cost matrix ``(L, K+1)`` of LP1 at an interior dual point."""
    z = dual.to_vector() if hasattr(dual, "to_vector") else np.asarray(dual, dtype=float)
    c_T, c_R, c_C, c_0 = unit_costs(scn, z)
    phi = np.empty((scn.L, scn.K + 1))
    phi[:, : scn.K] = np.outer(scn.T, c_T) + np.outer(scn.R, c_R) + np.outer(scn.C, c_C)
    phi[:, scn.K] = c_0 * scn.C
    return phi


@functools.lru_cache(maxsize=None)
def _cover_masks(n):
    masks = np.arange(1 << n)
    return [(np.flatnonzero(masks & (1 << j)), np.flatnonzero(masks & (1 << j)) ^ (1 << j)) for j in range(n)]


def assign_min_cost(phi):
    """Cheapest binary assignment that leaves no device empty.

    Every task goes to its cheapest device except one representative per
    device; choosing the representatives is a small matching solved by a
    dynamic program over subsets of covered devices. Since the constraint
    matrix of LP1 is totally unimodular, this is also the LP optimum.
    Ties go to the smaller device index.
    """
    phi = np.asarray(phi, dtype=float)
    L, n = phi.shape
    best = np.argmin(phi, axis=1)
    extra = phi - phi[np.arange(L), best][:, None]
    dp = np.full(1 << n, np.inf)
    dp[0] = 0.0
    choice = np.full((L, 1 << n), -1, dtype=np.int8)
    for l in range(L):
        new = dp.copy()
        for j, (tgt, src) in enumerate(_cover_masks(n)):
            cand = dp[src] + extra[l, j]
            take = cand < new[tgt]
            new[tgt[take]] = cand[take]
            choice[l, tgt[take]] = j
        dp = new
    pi = np.zeros((L, n))
    pi[np.arange(L), best] = 1.0
    mask = (1 << n) - 1
    for l in range(L - 1, -1, -1):
        j = choice[l, mask]
        if j >= 0:
            pi[l] = 0.0
            pi[l, j] = 1.0
            mask ^= 1 << int(j)
    return pi


def solve_lp1(scn: Scenario, dual=None, *, phi=None, method: str = "matching"):
    """Minimize ``sum(phi * pi)`` over relaxed assignments. Returns ``(pi, value)``.

    ``method="matching"`` uses :func:`assign_min_cost`; ``"simplex"`` solves
    the LP directly.
    """
    if phi is None:
        phi = phi_coefficients(scn, dual)
    L, K1 = phi.shape
    if method == "matching":
        pi = assign_min_cost(phi)
        return pi, float(np.sum(phi * pi))
    if method != "simplex":
        raise ValueError(f"unknown LP1 method {method!r}")
    A_eq, b_eq, A_ub, b_ub = assignment_constraints(L, K1 - 1)
    res = simplex_solve(LinearProgram(phi.reshape(-1), A_eq, b_eq, A_ub, b_ub))
    if res.status != "optimal":
        raise RuntimeError(f"LP1 returned {res.status}")
    return res.x.reshape(L, K1), res.value


def relaxed_energy_feasible(scn: Scenario, *, fixed_frequency: bool = False):
    """Whether some relaxed assignment keeps every device strictly under budget in the limit.

    Slots stretched without bound leave only the communication floor (and,
    at fixed frequency, the computation energy). Returns ``(feasible,
    margin)`` where ``margin`` is the smallest achievable worst-case ratio of
    that limit energy to budget; feasible iff ``margin < 1``.
    """
    L, K = scn.L, scn.K
    a = math.log(2.0) / scn.B
    n = L * (K + 1)
    per_local = np.zeros((L, K + 1))
    per_local[:, :K] = np.outer(scn.T, a / scn.hbar)
    rows = []
    if fixed_frequency:
        per_local[:, K] = scn.kappa0 * scn.C * scn.f0max**2
    rows.append(per_local.reshape(-1) / scn.E0)
    for k in range(K):
        per = np.zeros((L, K + 1))
        per[:, k] = scn.R * a / scn.gbar[k]
        if fixed_frequency:
            per[:, k] += scn.kappa[k] * scn.C * scn.fmax[k] ** 2
        rows.append(per.reshape(-1) / scn.E[k])
    A_eq, b_eq, A_ub, b_ub = assignment_constraints(L, K)
    # variables: vec(pi), s ; minimize s with energy_i(pi)/budget_i <= s
    E = np.array(rows)
    A_ub_full = np.vstack([np.hstack([A_ub, np.zeros((K + 1, 1))]), np.hstack([E, -np.ones((K + 1, 1))])])
    b_full = np.concatenate([b_ub, np.zeros(K + 1)])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = simplex_solve(LinearProgram(c, np.hstack([A_eq, np.zeros((L, 1))]), b_eq, A_ub_full, b_full))
    margin = res.value if res.status == "optimal" else math.inf
    return margin < 1.0, float(margin)


# ---------------------------------------------------------------------------
# LP2: primal retrieval at fixed rates / frequencies


def _linear_rows(scn, r_off, r_dl, freq, freq0):
    """Affine maps ``pi -> (objective, residuals)`` when all speeds are fixed.

    Returns ``(c_obj, M, const)`` with residual vector ``const + M @ vec(pi)``
    in dual-vector order.
    """
    L, K = scn.L, scn.K
    n = L * (K + 1)
    basis = np.eye(n).reshape(n, L, K + 1)
    stack = np.concatenate([np.zeros((1, L, K + 1)), basis])
    b_off, b_dl, cyc, cyc0 = device_loads(scn, stack)
    t_off = b_off / r_off
    t_dl = b_dl / r_dl
    t_c = cyc / freq
    t0_c = cyc0 / freq0
    # energies at a fixed speed are linear in the load: f(r) * bits / (r * gain)
    res, obj = residuals(scn, (b_off, b_dl, cyc, cyc0), t_off, t_dl, t_c, t0_c)
    return obj[1:] - obj[0], (res[1:] - res[0]).T, res[0]


@dataclass
class LP2Result:
    pi: np.ndarray | None
    value: float
    relax: float
    times: tuple | None = None
    clamped: bool = False


def dual_speeds(scn: Scenario, z):
    """Rates and frequencies ``(r_off, r_dl, freq, freq0)`` implied by dual ``z``."""
    u = unit_solution(scn, z)
    return u.r_off, u.r_dl, u.freq, float(u.freq0)


def solve_lp2(scn: Scenario, z, T_ref: float, max_relax: float = 1e-3, speeds=None) -> LP2Result:
    """Fractional assignment minimizing latency at the rates/frequencies implied by ``z``.

    ``speeds`` overrides the rates/frequencies taken from ``z``. Frequencies
    above their caps are clamped first. Constraint rows are normalized
    (energies by budget, times by ``T_ref``) and relaxed by ``LP2_RELAX``,
    growing tenfold up to ``max_relax`` while the LP stays infeasible.
    """
    K, L = scn.K, scn.L
    r_off, r_dl, freq, freq0 = dual_speeds(scn, z) if speeds is None else speeds
    clamped = bool(np.any(freq > scn.fmax * (1 + 1e-6)) or freq0 > scn.f0max * (1 + 1e-6))
    freq = np.minimum(freq, scn.fmax)
    freq0 = min(float(freq0), scn.f0max)
    c_obj, M, const = _linear_rows(scn, r_off, r_dl, freq, freq0)
    s = _slices(K)
    keep = np.r_[0, 1, 2, np.arange(dual_dim(K))[s["lam"]], np.arange(dual_dim(K))[s["beta"]]]
    scale = np.full(dual_dim(K), T_ref)
    scale[s["lambda0"]] = scn.E0
    scale[s["lam"]] = scn.E
    M, const, scale = M[keep], const[keep], scale[keep]
    A_eq, b_eq, A_ub, b_ub = assignment_constraints(L, K)
    relax = LP2_RELAX
    while relax <= max_relax * (1 + 1e-9):
        lp = LinearProgram(
            c_obj / T_ref,
            A_eq,
            b_eq,
            np.vstack([A_ub, M / scale[:, None]]),
            np.concatenate([b_ub, -const / scale + relax]),
        )
        res = simplex_solve(lp)
        if res.status == "optimal":
            pi = res.x.reshape(L, K + 1)
            b_off, b_dl, cyc, cyc0 = device_loads(scn, pi)
            times = (b_off / r_off, b_dl / r_dl, cyc / freq, float(cyc0 / freq0))
            return LP2Result(pi, float(c_obj @ res.x), relax, times, clamped)
        relax *= 10.0
    return LP2Result(None, math.inf, math.inf, None, clamped)


def solve_lp2_menu(scn: Scenario, speeds, T_ref: float, spread: float = 8.0, points: int = 33,
                   fixed_frequency: bool = False, assignment=None):
    """LP2 where every slot may split its load over a menu of speeds.

    Each slot gets ``points`` speeds spread geometrically by ``spread`` on
    either side of ``speeds`` (CPU speeds capped). Because slot energy is
    convex in the speed, any split costs at least the energy of running the
    whole load at the averaged speed, so the LP is a conservative inner
    approximation of the relaxed problem whose optimum is always feasible.
    With ``fixed_frequency`` every CPU runs at its cap. Helper 1 may idle
    after computing, which is what the fixed-frequency model needs.

    A given ``assignment`` pins the task split, which turns the LP into a
    primal method for the allocation problem alone.

    Returns ``(pi, times, value)`` with ``times`` the slot lengths (compute
    windows include the idle time), or ``None`` if the LP is infeasible.
    """
    K, L = scn.K, scn.L
    r_off, r_dl, freq, freq0 = speeds
    mult = np.geomspace(1.0 / spread, spread, points)
    a = math.log(2.0) / scn.B
    per_bit = lambda r, g: np.where(r > 0, rate_fn(r, scn.B) / np.where(r > 0, r, 1.0), a) / g
    cpu = (lambda f, cap: np.array([cap])) if fixed_frequency else (
        lambda f, cap: np.unique(np.minimum(f * mult, cap)))
    # slots: offload 1..K, download 1..K, compute 1..K, local compute
    menus, energy, owner, loads = [], [], [], []
    for k in range(K):
        v = r_off[k] * mult
        menus.append(v), energy.append(per_bit(v, scn.hbar[k])), owner.append(K), loads.append((k, scn.T))
    for k in range(K):
        v = r_dl[k] * mult
        menus.append(v), energy.append(per_bit(v, scn.gbar[k])), owner.append(k), loads.append((k, scn.R))
    for k in range(K):
        v = cpu(freq[k], scn.fmax[k])
        menus.append(v), energy.append(scn.kappa[k] * v**2), owner.append(k), loads.append((k, scn.C))
    v = cpu(freq0, scn.f0max)
    menus.append(v), energy.append(scn.kappa0 * v**2), owner.append(K), loads.append((K, scn.C))
    budgets = np.append(scn.E, scn.E0)

    # Split variables are measured in units of the slot's largest possible
    # load. Speeds that would burn far beyond the budget are dropped, since
    # they only hurt the conditioning of the tableau.
    cap = np.array([w.sum() for _, w in loads])
    for i in range(len(menus)):
        e = energy[i] * cap[i]
        keep = e <= 1e3 * budgets[owner[i]]
        keep[np.argmin(e)] = True
        menus[i], energy[i] = menus[i][keep], e[keep]

    n_pi = L * (K + 1)
    offs = np.cumsum([0] + [m.size for m in menus]) + n_pi
    n = offs[-1] + 1  # last column: idle time of helper 1, in units of T_ref
    split = np.zeros((len(menus), n))
    time_rows = np.zeros((len(menus), n))
    for i, ((col, w), m) in enumerate(zip(loads, menus)):
        split[i, col : n_pi : K + 1] = w / cap[i]
        split[i, offs[i] : offs[i + 1]] = -1.0
        time_rows[i, offs[i] : offs[i + 1]] = cap[i] / m
    off, dl, comp = time_rows[:K], time_rows[K : 2 * K], time_rows[2 * K : 3 * K]
    idle = np.zeros(n)
    idle[-1] = T_ref
    head = off[0] + comp[0] + idle

    A_eq_pi, b_eq_pi, A_ub_pi, b_ub_pi = assignment_constraints(L, K)
    if assignment is not None:
        A_eq_pi, b_eq_pi = np.eye(n_pi), np.asarray(assignment, dtype=float).reshape(-1)
        A_ub_pi, b_ub_pi = np.zeros((0, n_pi)), np.zeros(0)
    rows, rhs = [np.hstack([A_ub_pi, np.zeros((A_ub_pi.shape[0], n - n_pi))])], [b_ub_pi]
    for dev in range(K + 1):
        row = np.zeros(n)
        for i in range(len(menus)):
            if owner[i] == dev:
                row[offs[i] : offs[i + 1]] = energy[i]
        rows.append(row[None] / budgets[dev]), rhs.append([1.0 + LP2_RELAX])
    time_cons = [off.sum(0) - head]
    for k in range(1, K):
        time_cons.append(comp[k] - head - dl[:k].sum(0) + off[: k + 1].sum(0))
    time_cons.append(time_rows[3 * K] - head - dl.sum(0))
    rows.append(np.array(time_cons) / T_ref), rhs.append(np.full(len(time_cons), LP2_RELAX))
    c = (head + dl.sum(0)) / T_ref
    res = simplex_solve(LinearProgram(
        c,
        np.vstack([np.hstack([A_eq_pi, np.zeros((A_eq_pi.shape[0], n - n_pi))]), split]),
        np.concatenate([b_eq_pi, np.zeros(len(menus))]),
        np.vstack(rows),
        np.concatenate(rhs),
    ))
    if res.status != "optimal":
        return None
    pi = res.x[:n_pi].reshape(L, K + 1)
    tt = time_rows @ res.x
    t_c = tt[2 * K : 3 * K].copy()
    t_c[0] += res.x[-1] * T_ref
    times = (tt[:K], tt[K : 2 * K], t_c, float(tt[3 * K]))
    return pi, times, float(c @ res.x) * T_ref


# ---------------------------------------------------------------------------
# P1 dual


@dataclass
class P1Result:
    status: str  # "optimal" | "suboptimal" | "infeasible"
    pi: np.ndarray | None
    allocation: Allocation | None
    lower_bound: float
    primal_value: float
    gap: float
    dual: np.ndarray | None
    iterations: int
    diagnostics: dict = field(default_factory=dict)


class _P1Oracle:
    def __init__(self, scn: Scenario, T_ref: float):
        self.scn = scn
        self.K = scn.K
        self.n = dual_dim(scn.K)
        s = _slices(scn.K)
        self.scale = np.ones(self.n)
        self.scale[s["lambda0"]] = T_ref / scn.E0
        self.scale[s["lam"]] = T_ref / scn.E
        self.T_ref = T_ref
        self.G, self.h = domain_constraints(scn.K)
        self.GS = self.G * self.scale
        self.norms = np.linalg.norm(self.GS, axis=1)

    def value(self, z):
        """Dual function, supergradient and LP1 minimizer at real multipliers ``z``."""
        scn = self.scn
        phi = phi_coefficients(scn, z)
        pi, lp_val = solve_lp1(scn, phi=phi)
        loads = device_loads(scn, pi)
        u = unit_solution(scn, z)
        b_off, b_dl, cyc, cyc0 = loads
        t_off = np.where(b_off > 0, b_off / u.r_off, 0.0)
        t_dl = np.where(b_dl > 0, b_dl / u.r_dl, 0.0)
        t_c = np.where(cyc > 0, cyc / u.freq, 0.0)
        t0_c = cyc0 / u.freq0 if cyc0 > 0 else 0.0
        res, _ = residuals(scn, loads, t_off, t_dl, t_c, t0_c)
        s = _slices(self.K)
        val = lp_val - z[s["lambda0"]] * scn.E0 - z[s["lam"]] @ scn.E
        return float(val), res, pi

    def __call__(self, Zt, idx):
        zt = Zt[0]
        z = zt * self.scale
        score = (self.G @ z - self.h) / self.norms
        j = int(np.argmax(score))
        if score[j] > 0:
            return np.array([False]), np.zeros(1), self.GS[j][None], np.array([self.G[j] @ z - self.h[j]])
        val, res, _ = self.value(z)
        return np.array([True]), np.array([val / self.T_ref]), (res * self.scale / self.T_ref)[None], np.zeros(1)


def solve_p1(
    scn: Scenario,
    *,
    eps: float = 1e-6,
    gap_tol: float = P1_GAP_TOL,
    max_iter: int | None = None,
    check_every: int = 50,
    refinements: int = 2,
) -> P1Result:
    """Solve the relaxed problem: dual by ellipsoid + LP1, primal by LP2.

    Stops once the LP2 primal is within half of ``gap_tol`` of the dual
    bound, or when the ellipsoid certifies ``eps`` accuracy; a run that ends
    above ``gap_tol`` is resumed with ``eps / 100`` (up to ``refinements``
    times). ``lower_bound`` is always a valid bound on the binary optimum.
    """
    ok, margin = relaxed_energy_feasible(scn)
    if not ok:
        return P1Result("infeasible", None, None, math.inf, math.inf, math.inf, None, 0,
                        {"reason": "no relaxed assignment beats the communication energy floors", "margin": margin})
    T_ref = local_execution_latency(scn)
    oracle = _P1Oracle(scn, T_ref)
    n = oracle.n
    if max_iter is None:
        max_iter = 200 * n * n
    state = EllipsoidBatch.ball(np.full((1, n), 0.1), math.sqrt(100.0 * n))
    best = {"lp2": LP2Result(None, math.inf, math.inf), "dual": -math.inf, "z": None}

    def check(bx, bv, idx):
        z = bx[0] * oracle.scale
        lp2 = solve_lp2(scn, z, T_ref, max_relax=LP2_RELAX)
        best["dual"] = max(best["dual"], float(bv[0]) * T_ref)
        if lp2.value < best["lp2"].value:
            best["lp2"] = lp2
            best["z"] = z
        return np.array([_gap(best) <= 0.5 * gap_tol])

    bx = bv = None
    iters = 0
    cur_eps = eps
    for _ in range(refinements + 1):
        res = ellipsoid_maximize_batch(state, oracle, eps=cur_eps, max_iter=max_iter, best_x=bx, best_value=bv,
                                       stop=check, check_every=check_every)
        state, bx, bv = res.state, res.best_x, res.best_value
        iters += int(res.iterations[0])
        if np.isfinite(bv[0]):
            check(bx, bv, None)
        gap = _gap(best)
        if gap <= gap_tol:
            break
        cur_eps /= 100.0

    z_dual = bx[0] * oracle.scale
    if best["lp2"].pi is None:
        # last resort at the best dual point: let the rhs relaxation grow
        best["lp2"] = solve_lp2(scn, z_dual, T_ref)
        gap = _gap(best)
    lp2 = best["lp2"]
    diag = {"lp2_relax": lp2.relax, "frequency_clamped": lp2.clamped, "T_ref": T_ref, "lp2_value": lp2.value,
            "lp2_gap": gap}
    if lp2.pi is None:
        # fixed-speed LP2 found nothing: fall back to a wide speed menu
        speeds = dual_speeds(scn, z_dual)
        for spread in (8.0, 64.0, 512.0):
            menu = solve_lp2_menu(scn, speeds, T_ref, spread=spread)
            if menu is not None:
                break
        if menu is None:
            return P1Result("suboptimal", None, None, best["dual"], math.inf, math.inf, z_dual, iters, diag)
        diag["menu_fallback"] = spread
        pi, alloc, value = menu[0], Allocation(*menu[1]), menu[2]
        gap = (value - best["dual"]) / value
    else:
        pi, alloc, value = lp2.pi, Allocation(*lp2.times), lp2.value
    if gap > 0.5 * gap_tol:
        # Where the dual leaves some rate undetermined (a price and its time
        # coefficient both vanish), fixed-rate LP2 is not tight. Let every
        # slot choose from a menu of speeds around the current ones, then
        # re-optimize the slot times for the resulting fractional assignment.
        speeds = dual_speeds(scn, z_dual)
        for spread in (8.0, 2.0, 1.25):
            menu = solve_lp2_menu(scn, speeds, T_ref, spread=spread)
            if menu is None:
                break
            pol = solve_p2_batch(scn, menu[0][None])[0]
            if pol.feasible and pol.latency < value:
                pi, alloc, value = menu[0], pol.allocation, pol.latency
                speeds = _speeds_from(scn, pi, alloc, speeds)
                diag["polished"] = diag.get("polished", 0) + 1
                if (value - best["dual"]) / value <= 0.5 * gap_tol:
                    break
        gap = (value - best["dual"]) / value
    status = "optimal" if gap <= gap_tol else "suboptimal"
    return P1Result(status, pi, alloc, best["dual"], value, gap, z_dual, iters, diag)


def _speeds_from(scn, pi, alloc, fallback):
    """Speeds realized by ``alloc`` on its loaded slots, ``fallback`` elsewhere."""
    b_off, b_dl, cyc, cyc0 = device_loads(scn, pi)
    r_off, r_dl, freq, freq0 = fallback
    with np.errstate(divide="ignore", invalid="ignore"):
        r_off = np.where(b_off > 0, b_off / alloc.t_off, r_off)
        r_dl = np.where(b_dl > 0, b_dl / alloc.t_dl, r_dl)
        freq = np.where(cyc > 0, cyc / alloc.t_c, freq)
        freq0 = cyc0 / alloc.t0_c if cyc0 > 0 else freq0
    return r_off, r_dl, freq, float(freq0)


def _gap(best):
    v = best["lp2"].value
    return (v - best["dual"]) / v if math.isfinite(v) else math.inf


# ---------------------------------------------------------------------------
# rounding


def round_and_adjust(frac) -> np.ndarray:
    """Binary assignment from a fractional one: row-wise argmax, then fill empty devices.

    While some device is empty, take the lowest-index empty device ``k``
    and move to it, from among the tasks sitting on devices that hold at
    least two tasks, the one with the largest fractional weight on ``k``
    (ties go to the smallest task index).
    """
    frac = np.asarray(frac, dtype=float)
    L, K1 = frac.shape
    if L < K1:
        raise ValueError(f"need at least as many tasks as devices (L={L}, devices={K1})")
    labels = np.argmax(frac, axis=1)  # first maximum wins ties
    while True:
        counts = np.bincount(labels, minlength=K1)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        k = empty[0]
        movable = np.flatnonzero(counts[labels] >= 2)
        l = movable[np.argmax(frac[movable, k])]
        labels[l] = k
    out = np.zeros_like(frac)
    out[np.arange(L), labels] = 1.0
    return out


def algorithm1(scn: Scenario, **p2_kw) -> SchemeResult:
    """Relax, solve, round, and re-optimize the allocation for the rounded assignment."""
    p1 = solve_p1(scn)
    diag = {
        "lower_bound": p1.lower_bound,
        "p1_status": p1.status,
        "p1_gap": p1.gap,
        "p1_iterations": p1.iterations,
        **p1.diagnostics,
    }
    if p1.pi is None:
        return SchemeResult("joint", "infeasible", diagnostics=diag)
    pi = round_and_adjust(p1.pi)
    diag["fractional_assignment"] = p1.pi
    res = solve_p2(scn, pi, scheme="joint", **p2_kw)
    res.diagnostics = {**diag, **res.diagnostics}
    return res

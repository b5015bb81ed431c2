"""Fixed-frequency benchmark: every CPU runs at its cap, only the radio is optimized.

With frequencies pinned, computation energy is linear in the assigned cycles
and compute times are fixed, so the only continuous variables left are the
offload and download slots plus the time ``I1`` at which helper 1 may start
sending results back. ``I1`` stays an explicit variable here because helper 1
can no longer slow down to absorb idle time.

Multiplier layout (``n = 2K + 3``)::

    [lambda0, lambda_1..lambda_K, mu, nu, beta_2..beta_K, beta0]

``lambda`` prices the energy budgets, ``mu`` the constraint "all offloading
ends by ``I1``", ``nu`` "helper 1 finishes computing by ``I1``", ``beta_k``
the deadline of helper ``k`` and ``beta0`` the local deadline. The
Lagrangian coefficient of ``I1`` is ``1 - mu - nu - sum(beta) - beta0`` and
must be nonnegative for the inner minimum to be finite.
"""

from __future__ import annotations

import math

import numpy as np

from .allocator import DELTA, GAP_TOL, repair_energy, run_dual_batch
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
    local_execution_latency,
    rate_fn,
)
from .numerics.ellipsoid import EllipsoidBatch, ellipsoid_maximize_batch
from .numerics.lambertw import tilde_f
from .relax import (
    P1Result,
    relaxed_energy_feasible,
    round_and_adjust,
    solve_lp1,
    solve_lp2_menu,
)

FIXED_P1_GAP_TOL = 1e-3


def fixed_dual_dim(K: int) -> int:
    return 2 * K + 3


def _fslices(K):
    return {
        "lambda0": 0,
        "lam": slice(1, 1 + K),
        "mu": 1 + K,
        "nu": 2 + K,
        "beta": slice(3 + K, 2 + 2 * K),
        "beta0": 2 + 2 * K,
    }


def fixed_coefficients(Z, K):
    """Time coefficients ``(A, D, c_I)`` at stacked duals ``Z``.

    ``A`` (download) and ``D`` (offload) have shape ``(..., K)``; ``c_I``
    multiplies ``I1``.
    """
    Z = np.asarray(Z, dtype=float)
    s = _fslices(K)
    mu, nu, beta0, beta = Z[..., s["mu"]], Z[..., s["nu"]], Z[..., s["beta0"]], Z[..., s["beta"]]
    # tail[k] = sum of beta_j over helpers j >= k + 2 (0-based k)
    tail = np.flip(np.cumsum(np.flip(beta, -1), -1), -1)
    zero = np.zeros(Z.shape[:-1] + (1,))
    after = np.concatenate([tail, zero], -1)  # sum over j > k
    total = beta.sum(-1)
    A = 1.0 - beta0[..., None] - after
    D = np.concatenate([(mu + nu + total)[..., None], mu[..., None] + tail], -1)
    c_I = 1.0 - mu - nu - total - beta0
    return A, D, c_I


def fixed_domain_constraints(K):
    """Dual domain as ``G z <= h``: ``A, D >= DELTA``, ``c_I >= 0``, prices ``>= DELTA``, rest ``>= 0``."""
    n = fixed_dual_dim(K)

    def flat(Z):
        A, D, c_I = fixed_coefficients(Z, K)
        return np.concatenate([A, D, c_I[..., None]], -1)

    base = flat(np.zeros(n))
    M = flat(np.eye(n)) - base
    floor = np.full(2 * K + 1, DELTA)
    floor[-1] = 0.0
    lower = np.zeros(n)
    lower[: K + 1] = DELTA
    G = np.vstack([-M.T, -np.eye(n)])
    h = np.concatenate([base - floor, -lower])
    return G, h


def _per_bit(r, gain, B):
    """Energy per bit ``f(r) / (r gain)`` with its ``r -> 0`` limit."""
    with np.errstate(over="ignore"):
        return np.where(r > 0, rate_fn(r, B) / np.where(r > 0, r, 1.0), math.log(2.0) / B) / gain


def fixed_rates(scn: Scenario, Z):
    """Offload and download rates minimizing the Lagrangian at stacked duals ``Z``."""
    s = _fslices(scn.K)
    A, D, _ = fixed_coefficients(Z, scn.K)
    lam0, lam = Z[..., s["lambda0"]], Z[..., s["lam"]]
    r_off = tilde_f(np.maximum(D, 0.0) * scn.hbar / lam0[..., None], scn.B)
    r_dl = tilde_f(np.maximum(A, 0.0) * scn.gbar / lam, scn.B)
    return r_off, r_dl


def _caps(scn):
    return np.append(scn.fmax, scn.f0max)


def fixed_parts(scn: Scenario, loads, Z):
    """Inner minimizer, objective and constraint residuals at stacked duals.

    Returns ``(times, obj, res)`` with ``times = (t_off, t_dl, t_c, t0_c)``
    (compute times at the caps, ``I1`` taken as zero) and residuals in
    dual-vector order. The dual value is ``obj + res @ z``.
    """
    K = scn.K
    b_off, b_dl, cyc, cyc0 = loads
    r_off, r_dl = fixed_rates(scn, Z)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_off = np.where(b_off > 0, b_off / r_off, 0.0)
        t_dl = np.where(b_dl > 0, b_dl / r_dl, 0.0)
    t_c = cyc / scn.fmax
    t0_c = cyc0 / scn.f0max
    e_off = (b_off * _per_bit(r_off, scn.hbar, scn.B)).sum(-1)
    e_dl = b_dl * _per_bit(r_dl, scn.gbar, scn.B)
    res = np.empty(np.shape(Z))
    s = _fslices(K)
    res[..., s["lambda0"]] = e_off + scn.kappa0 * cyc0 * scn.f0max**2 - scn.E0
    res[..., s["lam"]] = e_dl + scn.kappa * cyc * scn.fmax**2 - scn.E
    res[..., s["mu"]] = t_off.sum(-1)
    res[..., s["nu"]] = t_off[..., 0] + t_c[..., 0]
    off_done = np.cumsum(t_off, -1)
    dl_before = np.cumsum(t_dl, -1) - t_dl
    res[..., s["beta"]] = (t_c + off_done - dl_before)[..., 1:]
    res[..., s["beta0"]] = t0_c - t_dl.sum(-1)
    return (t_off, t_dl, t_c, t0_c), t_dl.sum(-1), res


def _finish_fixed(scn, loads, t_off, t_dl, t_c, t0_c):
    freqs = np.broadcast_to(_caps(scn), np.shape(t0_c) + (scn.K + 1,))
    t_off, t_dl, t_c, t0_c = repair_energy(scn, loads, t_off, t_dl, t_c, t0_c, freqs=freqs)
    # idle time becomes part of the compute windows
    t_dl, t_c = canonicalize_arrays(t_off, t_dl, t_c, t0_c)
    return (t_off, t_dl, t_c, t0_c), latency_arrays(t_off, t_dl, t_c, t0_c)


class _FixedProblem:
    """Stacked fixed-frequency allocation problems (see ``allocator.run_dual_batch``)."""

    def __init__(self, scn: Scenario, pis):
        self.scn = scn
        K = scn.K
        self.n = fixed_dual_dim(K)
        self.loads = device_loads(scn, pis)
        b_off, b_dl, cyc, cyc0 = self.loads
        self.avail0 = scn.E0 - comm_energy_floor(b_off, scn.hbar, scn.B).sum(-1) - scn.kappa0 * cyc0 * scn.f0max**2
        self.avail = scn.E - comm_energy_floor(b_dl, scn.gbar, scn.B) - scn.kappa * cyc * scn.fmax**2
        m = self.avail0.shape[0]
        self.feasible = (self.avail0 > 0) & np.all(self.avail > 0, -1)
        self.T_ref = np.full(m, np.nan)
        self.base = None
        self.base_latency = np.full(m, np.inf)
        ok = np.flatnonzero(self.feasible)
        if ok.size:
            sub = self.sub_loads(ok)
            r = 20.0 * scn.B
            times, lat = _finish_fixed(scn, sub, sub[0] / r, sub[1] / r, sub[2] / scn.fmax, sub[3] / scn.f0max)
            self.base = [np.zeros((m,) + np.shape(t)[1:]) for t in times]
            for b, t in zip(self.base, times):
                b[ok] = t
            self.base_latency[ok] = lat
            self.T_ref[ok] = lat
        s = _fslices(K)
        self.scale = np.ones((m, self.n))
        with np.errstate(divide="ignore", invalid="ignore"):
            self.scale[:, s["lambda0"]] = self.T_ref / self.avail0
            self.scale[:, s["lam"]] = self.T_ref[:, None] / self.avail
        self.G, self.h = fixed_domain_constraints(K)

    def sub_loads(self, idx):
        return tuple(a[idx] for a in self.loads)

    def recover(self, loads, Z):
        (t_off, t_dl, t_c, t0_c), _, _ = fixed_parts(self.scn, loads, Z)
        return _finish_fixed(self.scn, loads, t_off, t_dl, t_c, t0_c)

    def oracle(self, Zt, idx):
        S = self.scale[idx]
        Z = Zt * S
        viol = Z @ self.G.T - self.h
        GS = self.G[None, :, :] * S[:, None, :]
        score = viol / np.linalg.norm(GS, axis=-1)
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
            _, obj, res = fixed_parts(self.scn, self.sub_loads(idx[ok]), Z[ok])
            T = self.T_ref[idx[ok]]
            val[ok] = (obj + np.einsum("mi,mi->m", res, Z[ok])) / T
            vec[ok] = res * S[ok] / T[:, None]
        return ok, val, vec, v


def _fixed_result(scn, pi, times, latency, status, diag, scheme="fixed"):
    alloc = Allocation(*times)
    freqs = _caps(scn)
    return SchemeResult(
        scheme=scheme,
        status=status,
        assignment=np.asarray(pi, dtype=float),
        allocation=alloc,
        latency=float(latency),
        energy=device_energies(scn, pi, alloc, frequencies=freqs),
        frequency=freqs,
        frequency_mode="fixed",
        diagnostics=diag,
    )


def solve_fixed_batch(
    scn: Scenario,
    assignments,
    *,
    eps: float = 1e-6,
    gap_tol: float = GAP_TOL,
    max_iter: int | None = None,
    check_every: int = 20,
    refinements: int = 2,
    scheme: str = "fixed",
) -> list[SchemeResult]:
    """Fixed-frequency slot allocation for a stack of assignments.

    An assignment is infeasible when computing at the caps plus the
    communication energy floor already exhausts some budget.
    """
    pis = np.asarray(assignments, dtype=float)
    if pis.ndim == 2:
        pis = pis[None]
    if pis.shape[1:] != (scn.L, scn.K + 1):
        raise ValueError(f"assignments must have shape (m, {scn.L}, {scn.K + 1})")
    prob = _FixedProblem(scn, pis)
    best_times, best_lat, dual, gap, iters = run_dual_batch(
        prob, eps=eps, gap_tol=gap_tol, max_iter=max_iter, check_every=check_every, refinements=refinements
    )
    out = []
    for i in range(pis.shape[0]):
        if not prob.feasible[i]:
            out.append(SchemeResult(scheme=scheme, status="infeasible", assignment=pis[i], frequency_mode="fixed",
                                    diagnostics={"reason": "computation at full speed exhausts an energy budget"}))
            continue
        times = tuple(t[i] for t in best_times)
        status = "optimal" if gap[i] <= gap_tol else "suboptimal"
        diag = {"dual_bound": float(dual[i]), "gap": float(gap[i]), "iterations": int(iters[i])}
        out.append(_fixed_result(scn, pis[i], times, best_lat[i], status, diag, scheme))
    return out


def solve_fixed_p2(scn: Scenario, assignment, **kw) -> SchemeResult:
    """Fixed-frequency allocation for one binary assignment."""
    pi = np.asarray(assignment, dtype=float)
    if not is_binary(pi):
        raise ValueError("solve_fixed_p2 needs a binary assignment")
    return solve_fixed_batch(scn, pi[None], **kw)[0]


# ---------------------------------------------------------------------------
# relaxed problem


def fixed_phi(scn: Scenario, z) -> np.ndarray:
    """LP1 cost matrix ``(L, K+1)`` of the fixed-frequency relaxation at dual ``z``."""
    K = scn.K
    s = _fslices(K)
    A, D, _ = fixed_coefficients(z, K)
    r_off, r_dl = fixed_rates(scn, z)
    lam0, lam = z[s["lambda0"]], z[s["lam"]]
    c_T = D / r_off + lam0 * _per_bit(r_off, scn.hbar, scn.B)
    c_R = A / r_dl + lam * _per_bit(r_dl, scn.gbar, scn.B)
    w = np.concatenate([[z[s["nu"]]], z[s["beta"]]])
    c_C = lam * scn.kappa * scn.fmax**2 + w / scn.fmax
    c_0 = lam0 * scn.kappa0 * scn.f0max**2 + z[s["beta0"]] / scn.f0max
    phi = np.empty((scn.L, K + 1))
    phi[:, :K] = np.outer(scn.T, c_T) + np.outer(scn.R, c_R) + np.outer(scn.C, c_C)
    phi[:, K] = c_0 * scn.C
    return phi


class _FixedP1Oracle:
    def __init__(self, scn: Scenario, T_ref: float):
        self.scn = scn
        K = scn.K
        self.n = fixed_dual_dim(K)
        s = _fslices(K)
        self.scale = np.ones(self.n)
        self.scale[s["lambda0"]] = T_ref / scn.E0
        self.scale[s["lam"]] = T_ref / scn.E
        self.T_ref = T_ref
        self.G, self.h = fixed_domain_constraints(K)
        self.GS = self.G * self.scale
        self.norms = np.linalg.norm(self.GS, axis=1)

    def value(self, z):
        scn = self.scn
        pi, lp_val = solve_lp1(scn, phi=fixed_phi(scn, z))
        _, _, res = fixed_parts(scn, device_loads(scn, pi), z)
        s = _fslices(scn.K)
        val = lp_val - z[s["lambda0"]] * scn.E0 - z[s["lam"]] @ scn.E
        return float(val), res, pi

    def __call__(self, Zt, idx):
        z = Zt[0] * self.scale
        score = (self.G @ z - self.h) / self.norms
        j = int(np.argmax(score))
        if score[j] > 0:
            return np.array([False]), np.zeros(1), self.GS[j][None], np.array([self.G[j] @ z - self.h[j]])
        val, res, _ = self.value(z)
        return np.array([True]), np.array([val / self.T_ref]), (res * self.scale / self.T_ref)[None], np.zeros(1)


def _menu_speeds(scn, z):
    r_off, r_dl = fixed_rates(scn, z)
    return r_off, r_dl, scn.fmax, scn.f0max


def solve_p1_fixed(
    scn: Scenario,
    *,
    eps: float = 1e-6,
    gap_tol: float = FIXED_P1_GAP_TOL,
    max_iter: int | None = None,
    check_every: int = 50,
    refinements: int = 2,
) -> P1Result:
    """Relaxed fixed-frequency problem: dual by ellipsoid + LP1, primal by a speed-menu LP."""
    ok, margin = relaxed_energy_feasible(scn, fixed_frequency=True)
    if not ok:
        return P1Result("infeasible", None, None, math.inf, math.inf, math.inf, None, 0,
                        {"reason": "computation at full speed exhausts a budget for every relaxed assignment",
                         "margin": margin})
    T_ref = local_execution_latency(scn)
    oracle = _FixedP1Oracle(scn, T_ref)
    n = oracle.n
    if max_iter is None:
        max_iter = 200 * n * n
    state = EllipsoidBatch.ball(np.full((1, n), 0.1), math.sqrt(100.0 * n))
    best = {"pi": None, "times": None, "primal": math.inf, "dual": -math.inf}

    def gap():
        p = best["primal"]
        return (p - best["dual"]) / p if math.isfinite(p) else math.inf

    def check(bx, bv, idx):
        z = bx[0] * oracle.scale
        best["dual"] = max(best["dual"], float(bv[0]) * T_ref)
        menu = solve_lp2_menu(scn, _menu_speeds(scn, z), T_ref, fixed_frequency=True)
        if menu is not None and menu[2] < best["primal"]:
            best["pi"], best["times"], best["primal"] = menu
        return np.array([gap() <= 0.5 * gap_tol])

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
        if gap() <= gap_tol:
            break
        cur_eps /= 100.0

    z_dual = bx[0] * oracle.scale
    diag = {"T_ref": T_ref, "menu_gap": gap()}
    if best["pi"] is None:
        return P1Result("suboptimal", None, None, best["dual"], math.inf, math.inf, z_dual, iters, diag)
    pi, alloc, value = best["pi"], Allocation(*best["times"]), best["primal"]
    if gap() > 0.5 * gap_tol:
        # re-optimize the slots for the fractional assignment, then let the
        # menu recentre on the speeds that produced
        pol = solve_fixed_batch(scn, pi[None])[0]
        if pol.feasible and pol.latency < value:
            alloc, value = pol.allocation, pol.latency
            b_off, b_dl, _, _ = device_loads(scn, pi)
            r_off, r_dl = fixed_rates(scn, z_dual)
            with np.errstate(divide="ignore", invalid="ignore"):
                r_off = np.where(b_off > 0, b_off / alloc.t_off, r_off)
                r_dl = np.where(b_dl > 0, b_dl / alloc.t_dl, r_dl)
            menu = solve_lp2_menu(scn, (r_off, r_dl, scn.fmax, scn.f0max), T_ref, spread=2.0,
                                  fixed_frequency=True)
            if menu is not None:
                pol = solve_fixed_batch(scn, menu[0][None])[0]
                if pol.feasible and pol.latency < value:
                    pi, alloc, value = menu[0], pol.allocation, pol.latency
    g = (value - best["dual"]) / value
    status = "optimal" if g <= gap_tol else "suboptimal"
    return P1Result(status, pi, alloc, best["dual"], value, g, z_dual, iters, diag)


def solve_fixed_frequency(scn: Scenario, **kw) -> SchemeResult:
    """Fixed-frequency scheme: relax, round, then allocate slots with CPUs at their caps.

    Returns status ``infeasible`` (not an exception) when no relaxed
    assignment fits the budgets at full speed, or when the rounded one does
    not.
    """
    p1 = solve_p1_fixed(scn)
    diag = {"lower_bound": p1.lower_bound, "p1_status": p1.status, "p1_gap": p1.gap,
            "p1_iterations": p1.iterations, **p1.diagnostics}
    if p1.pi is None:
        return SchemeResult("fixed", "infeasible", frequency_mode="fixed", diagnostics=diag)
    pi = round_and_adjust(p1.pi)
    diag["fractional_assignment"] = p1.pi
    res = solve_fixed_batch(scn, pi[None], **kw)[0]
    if not res.feasible:
        diag["reason"] = "rounded assignment exhausts an energy budget at full speed"
    res.diagnostics = {**diag, **res.diagnostics}
    return res

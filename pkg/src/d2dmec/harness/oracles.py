"""Independent reference solvers used to validate the main algorithms."""

from __future__ import annotations

import numpy as np

from ..model import Scenario, comm_energy, compute_energy, device_loads


def grid_oracle_p2(scn: Scenario, assignment, resolution: int = 1000, rounds: int = 3, zoom: float = 10.0,
                   bounds=(1e-7, 10.0)) -> float:
    """Best latency over a log-spaced 4-D grid of slot durations (one helper only).

    Searches ``(t_off, t_dl, t_c, t0_c)`` directly against the energy and
    frequency constraints, with no use of duality or closed forms. The
    value is the exact minimum over the tensor grid. After the
    initial grid, each of ``rounds`` refinements shrinks the log-window
    around the incumbent by ``zoom``. If no grid point is feasible the
    bounds widen by 100x on each side. Every returned value is attained by a
    feasible point, so it is an upper bound on the true optimum. Durations
    of empty slots are fixed to zero.
    """
    if scn.K != 1:
        raise ValueError("grid oracle handles a single helper")
    if scn.L > 3:
        raise ValueError("grid oracle is limited to L <= 3")
    b_off, b_dl, cyc, cyc0 = (np.asarray(a, dtype=float).reshape(-1) for a in device_loads(scn, assignment))
    cyc0 = float(cyc0[0])
    work = np.array([b_off[0], b_dl[0], cyc[0], cyc0])
    floor = np.array([0.0, 0.0, cyc[0] / scn.fmax[0], cyc0 / scn.f0max])

    def axes(lo, hi):
        out = []
        for d in range(4):
            if work[d] == 0:
                out.append(np.zeros(1))
                continue
            a = max(lo[d], floor[d])
            b = max(hi[d], a * (1 + 1e-12))
            out.append(np.geomspace(a, b, resolution))
        return out

    def search(ax):
        # Latency grows with every duration, so for each (t_off, t_c) the best
        # grid choice of t0_c and t_dl is the smallest feasible one. This
        # gives the exact minimum over the 4-D grid in O(N^2).
        t_off, t_dl, t_c, t0 = ax
        e_local = comm_energy(b_off[0], t_off, scn.hbar[0], scn.B)[:, None] + compute_energy(cyc0, scn.kappa0, t0)[None, :]
        e_help = comm_energy(b_dl[0], t_dl, scn.gbar[0], scn.B)[None, :] + compute_energy(cyc[0], scn.kappa[0], t_c)[:, None]
        t0_min, i0 = _first_feasible(e_local <= scn.E0, t0)  # per t_off
        dl_min, j0 = _first_feasible(e_help <= scn.E[0], t_dl)  # per t_c
        lat = np.maximum(t0_min[:, None], t_off[:, None] + t_c[None, :] + dl_min[None, :])
        i, k = np.unravel_index(np.argmin(lat), lat.shape)
        if not np.isfinite(lat[i, k]):
            return np.inf, None
        return lat[i, k], np.array([t_off[i], dl_min[k], t_c[k], t0_min[i]])

    lo = np.full(4, bounds[0])
    hi = np.full(4, bounds[1])
    for _ in range(20):
        best, point = search(axes(lo, hi))
        if np.isfinite(best):
            break
        lo, hi = lo / 100.0, hi * 100.0
    else:
        return float("inf")

    width = np.log(hi / lo)
    for _ in range(rounds):
        width = width / zoom
        lo_r = np.where(work > 0, point * np.exp(-width / 2), 0.0)
        hi_r = np.where(work > 0, point * np.exp(width / 2), 0.0)
        val, pt = search(axes(lo_r, hi_r))
        if val <= best:
            best, point = val, pt
    return float(best)


def _first_feasible(ok, values):
    """Per row of ``ok``: the smallest feasible grid value (``inf`` if none)."""
    any_ok = ok.any(axis=1)
    j = np.argmax(ok, axis=1)
    return np.where(any_ok, values[j], np.inf), j


def fixed_oracle_single_helper(scn: Scenario, assignment) -> float:
    """Exact fixed-frequency latency for one helper, by bisection on each slot.

    With both CPUs at their caps the latency is
    ``max(t_off + C_1/fmax_1 + t_dl, C_0/f0max)``. Each radio slot only
    draws on its own device's budget, so the optimum is the shortest slot
    that fits the budget left after computing. Returns ``inf`` when a budget
    cannot be met.
    """
    if scn.K != 1:
        raise ValueError("fixed oracle handles a single helper")
    b_off, b_dl, cyc, cyc0 = (np.asarray(a, dtype=float).reshape(-1) for a in device_loads(scn, assignment))
    left0 = scn.E0 - scn.kappa0 * cyc0[0] * scn.f0max**2
    left1 = scn.E[0] - scn.kappa[0] * cyc[0] * scn.fmax[0] ** 2

    def shortest(bits, gain, left):
        if bits == 0:
            return 0.0 if left >= 0 else np.inf
        if left <= bits * np.log(2.0) / (scn.B * gain):
            return np.inf
        lo, hi = 1e-12, 1.0
        while comm_energy(bits, hi, gain, scn.B) > left:
            lo, hi = hi, hi * 10.0
        for _ in range(200):
            mid = np.sqrt(lo * hi)
            if comm_energy(bits, mid, gain, scn.B) > left:
                lo = mid
            else:
                hi = mid
        return hi

    t_off = shortest(b_off[0], scn.hbar[0], left0)
    t_dl = shortest(b_dl[0], scn.gbar[0], left1)
    return float(max(t_off + cyc[0] / scn.fmax[0] + t_dl, cyc0[0] / scn.f0max))

"""Benchmark schemes: greedy assignment, exhaustive search, random and local-only.

The fixed-frequency benchmark lives in :mod:`d2dmec.fixed` and is re-exported
here. Every scheme returns a :class:`~d2dmec.model.SchemeResult`.
"""

from __future__ import annotations

import math
from itertools import islice

import numpy as np

from .allocator import solve_p2_batch
from .fixed import solve_fixed_batch, solve_fixed_frequency
from .model import (
    Allocation,
    Scenario,
    SchemeResult,
    assignment_from_labels,
    device_energies,
    local_execution_latency,
)
from .relax import round_and_adjust

__all__ = [
    "EXHAUSTIVE_CAP",
    "exhaustive_optimal",
    "greedy_assign",
    "iter_surjections",
    "local_only",
    "random_assignment",
    "solve_fixed_frequency",
    "surjection_count",
]

EXHAUSTIVE_CAP = 100_000
_CHUNK = 256


# ---------------------------------------------------------------------------
# surjective assignments


def surjection_count(L: int, K: int) -> int:
    """Number of assignments of ``L`` tasks that leave none of the ``K+1`` devices empty.

    Inclusion-exclusion: ``(K+1)^L - sum_{i=1..K} (-1)^(i+1) C(K+1, i) (K+1-i)^L``.
    """
    n = K + 1
    return n**L - sum((-1) ** (i + 1) * math.comb(n, i) * (n - i) ** L for i in range(1, n))


def iter_surjections(L: int, K: int):
    """Yield every surjective label vector (device per task, ``K`` = local) in lexicographic order."""
    n = K + 1
    labels = [0] * L
    used = [0] * n

    def rec(pos, missing):
        if L - pos < missing:
            return
        if pos == L:
            yield tuple(labels)
            return
        for d in range(n):
            labels[pos] = d
            used[d] += 1
            yield from rec(pos + 1, missing - (used[d] == 1))
            used[d] -= 1

    yield from rec(0, n)


# ---------------------------------------------------------------------------
# exhaustive search


def exhaustive_optimal(scn: Scenario, cap: int = EXHAUSTIVE_CAP, *, fixed_frequency: bool = False,
                       **solver_kw) -> SchemeResult:
    """Best binary assignment by solving the allocation problem for every surjective one.

    Raises
    ------
    ValueError
        If the number of assignments exceeds ``cap``; the message carries the count.
    """
    count = surjection_count(scn.L, scn.K)
    if count > cap:
        raise ValueError(f"{count} assignments exceed the exhaustive-search cap of {cap}")
    solve = solve_fixed_batch if fixed_frequency else solve_p2_batch
    scheme = "exhaustive_fixed" if fixed_frequency else "exhaustive"
    best = None
    n_feasible = 0
    gen = iter_surjections(scn.L, scn.K)
    while True:
        chunk = list(islice(gen, _CHUNK))
        if not chunk:
            break
        pis = np.stack([assignment_from_labels(lab, scn.K) for lab in chunk])
        for res in solve(scn, pis, scheme=scheme, **solver_kw):
            if not res.feasible:
                continue
            n_feasible += 1
            # strict comparison keeps the first assignment in lexicographic order on ties
            if best is None or res.latency < best.latency:
                best = res
    if best is None:
        return SchemeResult(scheme, "infeasible", frequency_mode="fixed" if fixed_frequency else "dvfs",
                            diagnostics={"count": count, "n_feasible": 0})
    best.diagnostics = {**best.diagnostics, "count": count, "n_feasible": n_feasible}
    return best


# ---------------------------------------------------------------------------
# greedy


def _greedy_pass(scn: Scenario, size, gain, **solver_kw):
    """One sub-scheme of the greedy heuristic, ordering tasks by ``size`` and helpers by ``gain``."""
    L, K = scn.L, scn.K
    order = np.argsort(size, kind="stable")  # ascending, ties by task index
    pi = np.zeros((L, K + 1))
    pi[order[-1], K] = 1.0  # heaviest data flow stays local
    free = list(range(K))
    for i in range(K):
        # best channel among unoccupied helpers, ties to the smaller index
        k = max(free, key=lambda j: (gain[j], -j))
        pi[order[i], k] = 1.0
        free.remove(k)
    evaluations = 0
    for i in range(K, L - 1):
        cand = np.repeat(pi[None], K + 1, axis=0)
        cand[np.arange(K + 1), order[i], np.arange(K + 1)] = 1.0
        lat = np.array([r.latency for r in solve_p2_batch(scn, cand, **solver_kw)])
        evaluations += K + 1
        pi = cand[int(np.argmin(lat))]  # ties to the smaller device index
    return pi, evaluations


def greedy_assign(scn: Scenario, **solver_kw) -> SchemeResult:
    """Greedy assignment: the better of the input-size and output-size sub-schemes.

    Each sub-scheme keeps the task with the largest payload local, hands the
    ``K`` smallest to the helpers by decreasing channel gain, then places the
    remaining tasks one at a time (in increasing size) on whichever device
    yields the lowest optimal latency so far. Equal results favour the
    input-size sub-scheme.
    """
    if scn.L < scn.K + 1:
        raise ValueError("greedy assignment needs L >= K + 1")
    pi_T, n_T = _greedy_pass(scn, scn.T, scn.hbar, **solver_kw)
    pi_R, n_R = _greedy_pass(scn, scn.R, scn.gbar, **solver_kw)
    res_T, res_R = solve_p2_batch(scn, np.stack([pi_T, pi_R]), scheme="greedy", **solver_kw)
    best, which = (res_T, "T") if res_T.latency <= res_R.latency else (res_R, "R")
    best.diagnostics = {**best.diagnostics, "sub_scheme": which, "latency_T": res_T.latency,
                        "latency_R": res_R.latency, "p2_evaluations": n_T + n_R + 2}
    return best


# ---------------------------------------------------------------------------
# random and local


def random_assignment(scn: Scenario, rng: np.random.Generator, **solver_kw) -> SchemeResult:
    """Uniform random scores per (task, device), rounded like the relaxation, then allocated optimally."""
    scores = rng.uniform(0.0, 1.0, size=(scn.L, scn.K + 1))
    pi = round_and_adjust(scores)
    res = solve_p2_batch(scn, pi[None], scheme="random", **solver_kw)[0]
    res.diagnostics = {**res.diagnostics, "scores": scores}
    return res


def local_only(scn: Scenario) -> SchemeResult:
    """Every task runs on the local user at the fastest speed its budget allows.

    Helpers receive nothing, so the result is not a surjective assignment.
    Helper 1's idle window is set to the local compute time so the
    allocation also satisfies the ordering constraints.
    """
    K = scn.K
    lat = local_execution_latency(scn)
    pi = np.zeros((scn.L, K + 1))
    pi[:, K] = 1.0
    t_c = np.zeros(K)
    t_c[0] = lat
    alloc = Allocation(np.zeros(K), np.zeros(K), t_c, lat)
    freq = np.zeros(K + 1)
    freq[K] = float(np.sum(scn.C)) / lat
    return SchemeResult(
        scheme="local",
        status="optimal",
        assignment=pi,
        allocation=alloc,
        latency=lat,
        energy=device_energies(scn, pi, alloc),
        frequency=freq,
        surjective=False,
    )

"""Domain types and physical formulas of the three-phase TDMA offloading system.

Conventions used throughout the package:

* An assignment is an ``(L, K + 1)`` array. Columns ``0..K-1`` are the
  helpers in their fixed TDMA order, column ``K`` is the local user.
* Per-device arrays (energies, frequencies) follow the same order, so the
  local user is always the last entry.
* Everything is SI: bits, cycles, Hz, seconds, joules, watts.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

LN2 = math.log(2.0)

# Feasibility tolerances: relative on energies/frequencies, absolute on times.
ENERGY_RTOL = 1e-9
TIME_ATOL = 1e-12


class InfeasibleAllocation(ValueError):
    """A slot carries a nonzero payload but has zero duration."""


def _frozen(a, n=None, name="array"):
    arr = np.array(a, dtype=float).reshape(-1)
    if n is not None and arr.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable problem instance.

    ``hbar``/``gbar`` are channel power gains already divided by the receiver
    noise power (units 1/W), so that ``rate = B log2(1 + p * hbar)``.
    """

    T: np.ndarray
    R: np.ndarray
    C: np.ndarray
    hbar: np.ndarray
    gbar: np.ndarray
    E0: float
    E: np.ndarray
    f0max: float
    fmax: np.ndarray
    kappa0: float
    kappa: np.ndarray
    B: float

    def __post_init__(self):
        T = _frozen(self.T, name="T")
        L = T.shape[0]
        hbar = _frozen(self.hbar, name="hbar")
        K = hbar.shape[0]
        set_ = object.__setattr__
        set_(self, "T", T)
        set_(self, "hbar", hbar)
        for name in ("R", "C"):
            set_(self, name, _frozen(getattr(self, name), L, name))
        for name in ("gbar", "E", "fmax"):
            set_(self, name, _frozen(getattr(self, name), K, name))
        kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), (K,))
        set_(self, "kappa", _frozen(kappa, K, "kappa"))
        for name in ("E0", "f0max", "kappa0", "B"):
            set_(self, name, float(getattr(self, name)))

        if K < 1:
            raise ValueError("need at least one helper")
        if L < K + 1:
            raise ValueError(f"need L >= K + 1 tasks (got L={L}, K={K})")
        for name in ("T", "R", "C"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be finite and >= 0")
        for name in ("hbar", "gbar", "E", "fmax", "kappa"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{name} must be finite and > 0")
        for name in ("E0", "f0max", "kappa0", "B"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0")

    @property
    def K(self) -> int:
        return self.hbar.shape[0]

    @property
    def L(self) -> int:
        return self.T.shape[0]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class Allocation:
    """Slot durations: per-helper offload/download/compute, plus local compute."""

    t_off: np.ndarray
    t_dl: np.ndarray
    t_c: np.ndarray
    t0_c: float

    def __post_init__(self):
        K = np.asarray(self.t_off).reshape(-1).shape[0]
        for name in ("t_off", "t_dl", "t_c"):
            object.__setattr__(self, name, _frozen(getattr(self, name), K, name))
        object.__setattr__(self, "t0_c", float(self.t0_c))

    @property
    def K(self) -> int:
        return self.t_off.shape[0]

    @property
    def objective(self) -> float:
        """Reformulated latency ``t1_off + t1_c + sum(t_dl)``."""
        return float(self.t_off[0] + self.t_c[0] + self.t_dl.sum())

    def to_dict(self) -> dict[str, Any]:
        return {
            "t_off": self.t_off.tolist(),
            "t_dl": self.t_dl.tolist(),
            "t_c": self.t_c.tolist(),
            "t0_c": self.t0_c,
        }

    @classmethod
    def from_dict(cls, d) -> "Allocation":
        return cls(d["t_off"], d["t_dl"], d["t_c"], d["t0_c"])


@dataclass
class SchemeResult:
    """Outcome of one scheme on one scenario.

    ``frequency_mode`` is ``"dvfs"`` when each device computes at
    ``cycles / t_c``, or ``"fixed"`` when it runs at its maximum frequency and
    ``t_c`` is the (possibly longer) execution window.
    """

    scheme: str
    status: str
    assignment: np.ndarray | None = None
    allocation: Allocation | None = None
    latency: float = math.inf
    energy: np.ndarray | None = None
    frequency: np.ndarray | None = None
    frequency_mode: str = "dvfs"
    surjective: bool = True
    diagnostics: dict[str, Any] = field(default_factory=dict)

    STATUSES = ("optimal", "suboptimal", "infeasible")

    def __post_init__(self):
        if self.status not in self.STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    def check(self, scenario: Scenario, **kw) -> "FeasibilityReport":
        freqs = None
        if self.frequency_mode == "fixed":
            freqs = self.frequency
        kw.setdefault("surjective", self.surjective)
        return check_feasible(scenario, self.assignment, self.allocation, frequencies=freqs, **kw)

    def to_dict(self) -> dict[str, Any]:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "scheme": self.scheme,
            "status": self.status,
            "latency_s": self.latency if math.isfinite(self.latency) else None,
            "assignment": arr(self.assignment),
            "allocation": None if self.allocation is None else self.allocation.to_dict(),
            "energy_J": arr(self.energy),
            "frequency_Hz": arr(self.frequency),
            "frequency_mode": self.frequency_mode,
            "surjective": self.surjective,
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d) -> "SchemeResult":
        """Inverse of :meth:`to_dict` (diagnostics are kept as plain JSON)."""
        arr = lambda a: None if a is None else np.asarray(a, dtype=float)
        lat = d.get("latency_s")
        return cls(
            scheme=d["scheme"],
            status=d["status"],
            assignment=arr(d.get("assignment")),
            allocation=None if d.get("allocation") is None else Allocation.from_dict(d["allocation"]),
            latency=math.inf if lat is None else float(lat),
            energy=arr(d.get("energy_J")),
            frequency=arr(d.get("frequency_Hz")),
            frequency_mode=d.get("frequency_mode", "dvfs"),
            surjective=bool(d.get("surjective", True)),
            diagnostics=d.get("diagnostics", {}),
        )


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# assignments


def device_loads(scenario: Scenario, pi):
    """Aggregate payloads per device.

    Returns ``(bits_off, bits_dl, cycles, cycles0)`` with the first three of
    shape ``(..., K)``. Works on a single ``(L, K+1)`` assignment or a stack.
    """
    pi = np.asarray(pi, dtype=float)
    K = scenario.K
    bits_off = np.einsum("...lk,l->...k", pi[..., :K], scenario.T)
    bits_dl = np.einsum("...lk,l->...k", pi[..., :K], scenario.R)
    cycles = np.einsum("...lk,l->...k", pi[..., :K], scenario.C)
    cycles0 = np.einsum("...l,l->...", pi[..., K], scenario.C)
    return bits_off, bits_dl, cycles, cycles0


def assignment_from_labels(labels, K: int) -> np.ndarray:
    """One-hot assignment from per-task device indices (``K`` means local)."""
    labels = np.asarray(labels, dtype=int)
    pi = np.zeros((labels.shape[0], K + 1))
    pi[np.arange(labels.shape[0]), labels] = 1.0
    return pi


def is_binary(pi, atol=0.0) -> bool:
    pi = np.asarray(pi)
    return bool(np.all((np.abs(pi) <= atol) | (np.abs(pi - 1) <= atol)))


# ---------------------------------------------------------------------------
# physical formulas


def rate_fn(x, B):
    """``f(x) = 2**(x/B) - 1``: SNR needed to carry ``x`` bit/s over bandwidth ``B``."""
    return np.expm1(np.asarray(x, dtype=float) * (LN2 / B))


def comm_energy(bits, t, gain, B):
    """Energy ``f(bits/t) * t / gain`` of one transmission slot (vectorized).

    Zero payload costs nothing whatever the duration. Raises
    :class:`InfeasibleAllocation` for a positive payload in a zero-length slot.
    """
    bits, t, gain = np.broadcast_arrays(
        np.asarray(bits, dtype=float), np.asarray(t, dtype=float), np.asarray(gain, dtype=float)
    )
    if np.any((bits > 0) & (t <= 0)):
        raise InfeasibleAllocation("nonzero payload scheduled in a zero-length slot")
    active = bits > 0
    tt = np.where(active, t, 1.0)
    with np.errstate(over="ignore"):  # absurd rates cost infinite energy
        out = np.where(active, rate_fn(bits / tt, B) * tt / gain, 0.0)
    return out if out.ndim else float(out)


def comm_energy_floor(bits, gain, B):
    """Limit of :func:`comm_energy` as the slot length goes to infinity."""
    return np.asarray(bits, dtype=float) * LN2 / (B * np.asarray(gain, dtype=float))


def offload_energy(scenario: Scenario, pi, t_off) -> float:
    """Total energy the local user spends offloading to all helpers."""
    bits, _, _, _ = device_loads(scenario, pi)
    return float(np.sum(comm_energy(bits, t_off, scenario.hbar, scenario.B)))


def download_energy(scenario: Scenario, pi, t_dl) -> np.ndarray:
    """Per-helper energy for sending results back."""
    _, bits, _, _ = device_loads(scenario, pi)
    return np.asarray(comm_energy(bits, t_dl, scenario.gbar, scenario.B))


def compute_energy(cycles, kappa, t_c):
    """DVFS computation energy ``kappa * cycles**3 / t_c**2``; zero for zero cycles."""
    cycles, kappa, t_c = np.broadcast_arrays(
        np.asarray(cycles, dtype=float), np.asarray(kappa, dtype=float), np.asarray(t_c, dtype=float)
    )
    if np.any((cycles > 0) & (t_c <= 0)):
        raise InfeasibleAllocation("nonzero cycles scheduled in a zero-length slot")
    active = cycles > 0
    tt = np.where(active, t_c, 1.0)
    out = np.where(active, kappa * cycles**3 / tt**2, 0.0)
    return out if out.ndim else float(out)


def frequency_of(cycles, t_c):
    """CPU frequency needed to run ``cycles`` within ``t_c`` seconds."""
    cycles, t_c = np.broadcast_arrays(np.asarray(cycles, dtype=float), np.asarray(t_c, dtype=float))
    tt = np.where(cycles > 0, t_c, 1.0)
    out = np.where(cycles > 0, cycles / tt, 0.0)
    return out if out.ndim else float(out)


def local_execution_latency(scenario: Scenario) -> float:
    """Latency of running every task locally: the slower of the energy and frequency limits."""
    total = float(np.sum(scenario.C))
    return max(math.sqrt(scenario.kappa0 * total**3 / scenario.E0), total / scenario.f0max)


def device_energies(scenario: Scenario, pi, alloc: Allocation, frequencies=None) -> np.ndarray:
    """Energy used per device, helpers first then the local user.

    ``frequencies`` (length ``K+1``) switches computation energy to the
    fixed-frequency form ``kappa * cycles * f**2``.
    """
    b_off, b_dl, cyc, cyc0 = device_loads(scenario, pi)
    if frequencies is None:
        e_c = compute_energy(cyc, scenario.kappa, alloc.t_c)
        e0_c = compute_energy(cyc0, scenario.kappa0, alloc.t0_c)
    else:
        f = np.asarray(frequencies, dtype=float)
        e_c = scenario.kappa * cyc * f[: scenario.K] ** 2
        e0_c = scenario.kappa0 * cyc0 * f[scenario.K] ** 2
    e_dl = comm_energy(b_dl, alloc.t_dl, scenario.gbar, scenario.B)
    e_off = comm_energy(b_off, alloc.t_off, scenario.hbar, scenario.B)
    return np.append(e_c + e_dl, e0_c + np.sum(e_off))


# ---------------------------------------------------------------------------
# latency


def latency_arrays(t_off, t_dl, t_c, t0_c):
    """Waiting-time recursion on stacked arrays: ``(..., K)`` slots, ``(...)`` local time."""
    t_off, t_dl, t_c = (np.asarray(a, dtype=float) for a in (t_off, t_dl, t_c))
    off_done = np.cumsum(t_off, axis=-1)
    wait = np.maximum(t_off[..., 0] + t_c[..., 0], off_done[..., -1])
    for k in range(1, t_off.shape[-1]):
        wait = np.maximum(off_done[..., k] + t_c[..., k], wait + t_dl[..., k - 1])
    return np.maximum(t0_c, wait + t_dl[..., -1])


def canonicalize_arrays(t_off, t_dl, t_c, t0_c):
    """Array form of :func:`canonicalize`; returns new ``(t_dl, t_c)``."""
    t_off = np.asarray(t_off, dtype=float)
    t_dl = np.array(t_dl, dtype=float)
    t_c = np.array(t_c, dtype=float)
    off_done = np.cumsum(t_off, axis=-1)
    t_c[..., 0] = np.maximum(t_c[..., 0], off_done[..., -1] - t_off[..., 0])
    wait = t_off[..., 0] + t_c[..., 0]
    for k in range(1, t_off.shape[-1]):
        t_dl[..., k - 1] = np.maximum(t_dl[..., k - 1], off_done[..., k] + t_c[..., k] - wait)
        wait = wait + t_dl[..., k - 1]
    t_dl[..., -1] = np.maximum(t_dl[..., -1], t0_c - wait)
    return t_dl, t_c


def total_latency_recursive(alloc: Allocation) -> float:
    """Completion time from the TDMA waiting-time recursion.

    Helper 1 waits for its own computation and for the whole offloading
    phase; helper ``k`` waits for its computation and for helper ``k-1`` to
    finish downloading. The local user runs in parallel.
    """
    return float(latency_arrays(alloc.t_off, alloc.t_dl, alloc.t_c, alloc.t0_c))


def canonicalize(alloc: Allocation) -> Allocation:
    """Insert idle time so the reformulated constraints hold with the same latency.

    Any slack in the schedule is absorbed by stretching helper 1's compute
    window and the download slots, exactly as in the waiting-time recursion.
    The result satisfies ``objective == total_latency_recursive`` and uses
    no more energy than the input.
    """
    t_dl, t_c = canonicalize_arrays(alloc.t_off, alloc.t_dl, alloc.t_c, alloc.t0_c)
    return Allocation(alloc.t_off, t_dl, t_c, alloc.t0_c)


# ---------------------------------------------------------------------------
# feasibility


@dataclass
class FeasibilityReport:
    """Per-constraint residuals. A residual ``<= 0`` means satisfied."""

    residuals: dict[str, float]

    @property
    def ok(self) -> bool:
        return all(r <= 0 for r in self.residuals.values())

    def failures(self) -> dict[str, float]:
        return {k: r for k, r in self.residuals.items() if r > 0}

    def __bool__(self):
        return self.ok


def check_feasible(
    scenario: Scenario,
    pi,
    alloc: Allocation,
    *,
    rel_tol: float = ENERGY_RTOL,
    abs_tol: float = TIME_ATOL,
    frequencies=None,
    surjective: bool = True,
    binary: bool | None = None,
) -> FeasibilityReport:
    """Check an (assignment, allocation) pair against every constraint.

    Residuals are reported already net of tolerance, so the report passes
    iff every residual is ``<= 0``. Energy and frequency residuals are
    relative; time residuals are in seconds.

    With ``frequencies`` given, devices run at those frequencies and
    ``t_c``/``t0_c`` are execution windows that must fit the work.
    """
    K = scenario.K
    pi = np.asarray(pi, dtype=float)
    res: dict[str, float] = {}

    res["assign.shape"] = 0.0 if pi.shape == (scenario.L, K + 1) else 1.0
    if res["assign.shape"] > 0:
        return FeasibilityReport(res)
    res["assign.range"] = float(max(-pi.min(), pi.max() - 1.0)) - 1e-12
    res["assign.rows"] = float(np.max(np.abs(pi.sum(axis=1) - 1.0))) - 1e-9
    if surjective:
        res["assign.cols"] = float(np.max(1.0 - pi.sum(axis=0))) - 1e-9
    if binary or (binary is None and is_binary(pi, 1e-12)):
        res["assign.binary"] = 0.0 if is_binary(pi, 1e-12) else 1.0

    times = np.concatenate([alloc.t_off, alloc.t_dl, alloc.t_c, [alloc.t0_c]])
    res["times.nonneg"] = float(-times.min()) - abs_tol
    if not np.all(np.isfinite(times)):
        res["times.finite"] = 1.0
        return FeasibilityReport(res)

    b_off, b_dl, cyc, cyc0 = device_loads(scenario, pi)
    try:
        energy = device_energies(scenario, pi, alloc, frequencies)
    except InfeasibleAllocation:
        res["energy.defined"] = 1.0
        return FeasibilityReport(res)
    res["energy.local"] = (energy[K] - scenario.E0) / scenario.E0 - rel_tol
    for k in range(K):
        res[f"energy.helper{k + 1}"] = (energy[k] - scenario.E[k]) / scenario.E[k] - rel_tol

    if frequencies is None:
        f = frequency_of(cyc, alloc.t_c)
        f0 = frequency_of(cyc0, alloc.t0_c)
    else:
        fr = np.asarray(frequencies, dtype=float)
        f, f0 = np.where(cyc > 0, fr[:K], 0.0), (fr[K] if cyc0 > 0 else 0.0)
        # work must fit inside the execution window
        need = np.append(np.where(cyc > 0, cyc / np.where(f > 0, f, 1), 0.0), cyc0 / f0 if cyc0 > 0 else 0.0)
        have = np.append(alloc.t_c, alloc.t0_c)
        res["window.fits"] = float(np.max(need - have)) - abs_tol
    res["freq.local"] = (f0 - scenario.f0max) / scenario.f0max - rel_tol
    for k in range(K):
        res[f"freq.helper{k + 1}"] = (f[k] - scenario.fmax[k]) / scenario.fmax[k] - rel_tol

    t_off, t_dl, t_c = alloc.t_off, alloc.t_dl, alloc.t_c
    head = t_off[0] + t_c[0]
    res["order.offload_before_download"] = float(t_off.sum() - head) - abs_tol
    off_done = np.cumsum(t_off)
    dl_done = np.concatenate([[0.0], np.cumsum(t_dl)])
    for k in range(1, K):
        res[f"order.helper{k + 1}_deadline"] = float(t_c[k] - (head + dl_done[k] - off_done[k])) - abs_tol
    res["order.local_deadline"] = float(alloc.t0_c - (head + t_dl.sum())) - abs_tol
    return FeasibilityReport(res)

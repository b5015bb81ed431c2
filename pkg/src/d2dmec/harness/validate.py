"""Self-checks run on one scenario: feasibility, latency bookkeeping, bounds and numerics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..allocator import GAP_TOL
from ..heuristics import EXHAUSTIVE_CAP, exhaustive_optimal, surjection_count
from ..model import Scenario, SchemeResult, total_latency_recursive
from ..numerics.lambertw import lambert_w0
from ..relax import P1_GAP_TOL, algorithm1

RECURSION_RTOL = 1e-9
LAMBERT_TOL = 1e-12


@dataclass
class CheckRow:
    name: str
    status: str  # "pass" | "fail" | "skip"
    detail: str = ""


@dataclass
class ValidationReport:
    rows: list = field(default_factory=list)

    def add(self, name, ok, detail=""):
        self.rows.append(CheckRow(name, "pass" if ok else "fail", detail))

    def skip(self, name, detail):
        self.rows.append(CheckRow(name, "skip", detail))

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.rows)

    def row(self, name) -> CheckRow:
        return next(r for r in self.rows if r.name == name)

    def table(self) -> str:
        w = max(len(r.name) for r in self.rows)
        lines = [f"{'check':<{w}}  result  detail", f"{'-' * w}  ------  ------"]
        lines += [f"{r.name:<{w}}  {r.status.upper():<6}  {r.detail}" for r in self.rows]
        return "\n".join(lines)

    def to_dict(self):
        return {"ok": self.ok, "checks": [{"name": r.name, "status": r.status, "detail": r.detail}
                                          for r in self.rows]}


def recursion_equivalent(res: SchemeResult, rtol: float = RECURSION_RTOL) -> tuple[bool, str]:
    """Reported latency, the waiting-time recursion and the linear objective must agree."""
    rec = total_latency_recursive(res.allocation)
    lin = res.allocation.objective
    scale = max(abs(rec), 1e-300)
    err = max(abs(rec - lin), abs(rec - res.latency)) / scale
    return err <= rtol, f"recursive={rec:.9g} s, linear={lin:.9g} s, reported={res.latency:.9g} s, rel err {err:.2e}"


def lambert_round_trip(n: int = 2000, seed: int = 0) -> float:
    """Worst relative error of ``W(x) exp(W(x)) = x`` over a log-spread sample."""
    rng = np.random.default_rng(seed)
    x = np.concatenate([
        -math.exp(-1.0) * rng.uniform(0.0, 1.0, n // 4),
        np.geomspace(1e-12, 1e12, n // 2) * rng.uniform(0.5, 1.5, n // 2),
        rng.uniform(-0.3, 3.0, n // 4),
    ])
    w = lambert_w0(x)
    # relative to |x| plus the conditioning floor w' = W/(x(1+W)) near the branch point
    err = np.abs(w * np.exp(w) - x) / np.maximum(np.abs(x), 1e-300)
    near = x < -0.36
    err[near] = np.abs(w[near] * np.exp(w[near]) - x[near])
    return float(err.max())


def validate_scenario(scn: Scenario, result: SchemeResult | None = None, *, cap: int = EXHAUSTIVE_CAP,
                      p2_gap_tol: float = GAP_TOL, p1_gap_tol: float = P1_GAP_TOL) -> ValidationReport:
    """Run every check on ``scn``.

    ``result`` defaults to the joint algorithm's output. Feasibility and
    recursion checks apply to ``result``; the bound and gap checks use the
    joint algorithm (rerun only when ``result`` came from another scheme).
    """
    rep = ValidationReport()
    joint = result if result is not None and result.scheme == "joint" else None
    if result is None:
        joint = result = algorithm1(scn)

    if not result.feasible:
        rep.skip("check_feasible", f"{result.scheme} reported infeasible")
        rep.skip("recursion_equivalence", "no allocation")
    else:
        fr = result.check(scn)
        worst = max(((k, v) for k, v in fr.residuals.items() if k not in ("assign.shape", "assign.binary")), key=lambda kv: kv[1])
        rep.add("check_feasible", fr.ok, f"{result.scheme}: worst residual {worst[0]}={worst[1]:.2e}")
        ok, detail = recursion_equivalent(result)
        rep.add("recursion_equivalence", ok, detail)

    if joint is None:
        joint = algorithm1(scn)
    count = surjection_count(scn.L, scn.K)
    if not joint.feasible:
        rep.skip("sandwich", "joint algorithm found no feasible assignment")
    elif count > cap:
        rep.skip("sandwich", f"too large to enumerate ({count} assignments > cap {cap})")
    else:
        ex = exhaustive_optimal(scn, cap)
        lb = joint.diagnostics.get("lower_bound", -math.inf)
        # exhaustive and joint are both P2 solutions to relative accuracy p2_gap_tol
        ok = lb <= ex.latency * (1 + 1e-12) and ex.latency <= joint.latency * (1 + p2_gap_tol)
        rep.add("sandwich", ok, f"lower bound {lb:.6g} <= exhaustive {ex.latency:.6g} <= joint {joint.latency:.6g} "
                                f"over {count} assignments")

    if joint.feasible:
        p1_gap = joint.diagnostics.get("p1_gap", math.inf)
        rep.add("p1_duality_gap", p1_gap <= p1_gap_tol, f"{p1_gap:.2e} (tol {p1_gap_tol:g})")
        p2_gap = joint.diagnostics.get("gap", math.inf)
        rep.add("p2_duality_gap", p2_gap <= p2_gap_tol, f"{p2_gap:.2e} (tol {p2_gap_tol:g})")
    else:
        rep.skip("p1_duality_gap", "joint algorithm infeasible")
        rep.skip("p2_duality_gap", "joint algorithm infeasible")

    err = lambert_round_trip()
    rep.add("lambert_w_round_trip", err <= LAMBERT_TOL, f"max error {err:.2e} (tol {LAMBERT_TOL:g})")
    return rep

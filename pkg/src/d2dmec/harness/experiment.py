"""Parameter sweeps over many channel realizations.

An experiment config is a JSON object::

    {
      "name": "fig3",
      "base": {...GenConfig fields...},
      "sweep": {"fields": ["Ek_db"], "values": [-40, -35, ...]},
      "realizations": 50,
      "seed": 1,
      "schemes": ["joint", "fixed", "greedy", "random", "local", "exhaustive"]
    }

A sweep field ending in ``_range`` is pinned to ``(v, v)``. Realization ``r``
uses the same random stream at every sweep point, so the curves compare
like with like.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..heuristics import (
    EXHAUSTIVE_CAP,
    exhaustive_optimal,
    greedy_assign,
    local_only,
    random_assignment,
    solve_fixed_frequency,
    surjection_count,
)
from ..instances import GenConfig, gen_scenario, realization_rng
from ..model import SchemeResult, Scenario
from ..relax import algorithm1

log = logging.getLogger(__name__)

SCHEMES = ("joint", "fixed", "greedy", "random", "local", "exhaustive")
CSV_COLUMNS = ("sweep_value", "scheme", "mean_latency_s", "std", "n_feasible", "n_total")
DEFAULT_REALIZATIONS = 50
ORDER_RTOL = 1e-3  # exhaustive may exceed another scheme by this much (solver tolerance)


def scheme_rng(seed: int, index: int) -> np.random.Generator:
    """Stream for the random-assignment scheme, independent of the channel draws."""
    return np.random.default_rng([int(seed), int(index), 1])


def run_scheme(scn: Scenario, scheme: str, rng: np.random.Generator | None = None) -> SchemeResult:
    """Dispatch one scheme by name."""
    if scheme == "joint":
        return algorithm1(scn)
    if scheme == "fixed":
        return solve_fixed_frequency(scn)
    if scheme == "greedy":
        return greedy_assign(scn)
    if scheme == "random":
        return random_assignment(scn, rng if rng is not None else np.random.default_rng(0))
    if scheme == "local":
        return local_only(scn)
    if scheme == "exhaustive":
        return exhaustive_optimal(scn)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")


@dataclass
class ExperimentConfig:
    name: str
    base: GenConfig
    sweep_fields: tuple[str, ...]
    values: tuple[float, ...]
    realizations: int = DEFAULT_REALIZATIONS
    seed: int = 0
    schemes: tuple[str, ...] = SCHEMES
    description: str = ""

    def __post_init__(self):
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(f"unknown scheme(s) {unknown}; choose from {', '.join(SCHEMES)}")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        names = set(GenConfig.__dataclass_fields__)
        bad = [f for f in self.sweep_fields if f not in names]
        if bad:
            raise ValueError(f"sweep field(s) {bad} are not GenConfig fields")
        if not self.values:
            raise ValueError("sweep needs at least one value")

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        sweep = d.get("sweep", {})
        fields = sweep.get("fields", [sweep["field"]] if "field" in sweep else [])
        return cls(
            name=d.get("name", "experiment"),
            base=GenConfig.from_dict(d.get("base", {})),
            sweep_fields=tuple(fields),
            values=tuple(sweep.get("values", [])),
            realizations=int(d.get("realizations", DEFAULT_REALIZATIONS)),
            seed=int(d.get("seed", 0)),
            schemes=tuple(d.get("schemes", SCHEMES)),
            description=d.get("description", ""),
        )

    def to_dict(self):
        return {
            "name": self.name,
            "description": self.description,
            "base": self.base.to_dict(),
            "sweep": {"fields": list(self.sweep_fields), "values": list(self.values)},
            "realizations": self.realizations,
            "seed": self.seed,
            "schemes": list(self.schemes),
        }

    def point(self, value) -> GenConfig:
        """Generator config at one sweep value."""
        changes = {}
        for f in self.sweep_fields:
            if f.endswith("_range"):
                changes[f] = (float(value), float(value))
            elif f in ("K", "L", "seed"):
                changes[f] = int(value)
            else:
                changes[f] = float(value)
        return self.base.replace(**changes)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def preset_names() -> list[str]:
    root = resources.files("d2dmec") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    root = resources.files("d2dmec") / "configs"
    path = root / f"{name}.json"
    if not path.is_file():
        raise ValueError(f"no preset {name!r}; available: {', '.join(preset_names())}")
    return ExperimentConfig.from_dict(json.loads(path.read_text()))


@dataclass
class PointSummary:
    sweep_value: float
    scheme: str
    latencies: list  # per realization, None when infeasible or failed
    statuses: list
    checks_ok: list
    failures: list = field(default_factory=list)

    @property
    def n_total(self) -> int:
        return len(self.latencies)

    @property
    def n_feasible(self) -> int:
        return sum(x is not None for x in self.latencies)

    @property
    def feasible_latencies(self) -> np.ndarray:
        return np.array([x for x in self.latencies if x is not None], dtype=float)

    def row(self) -> dict:
        lat = self.feasible_latencies
        mean = float(lat.mean()) if lat.size else math.nan
        std = float(lat.std(ddof=1)) if lat.size > 1 else (0.0 if lat.size else math.nan)
        return {
            "sweep_value": self.sweep_value,
            "scheme": self.scheme,
            "mean_latency_s": mean,
            "std": std,
            "n_feasible": int(lat.size),
            "n_total": self.n_total,
        }


def _solve_realization(cfg: ExperimentConfig, gen: GenConfig, value, index: int, schemes):
    """Every requested scheme on realization ``index`` at one sweep point."""
    scn = gen_scenario(gen, realization_rng(cfg.seed, index))
    out = {}
    for scheme in schemes:
        try:
            res = run_scheme(scn, scheme, scheme_rng(cfg.seed, index))
        except Exception as exc:  # solver breakdown: logged, excluded, counted
            log.warning("%s: %s failed on realization %d at %s: %s", cfg.name, scheme, index, value, exc)
            out[scheme] = (None, "failed", False, f"{type(exc).__name__}: {exc}")
            continue
        ok = bool(res.check(scn).ok) if res.feasible else True
        lat = float(res.latency) if res.feasible else None
        out[scheme] = (lat, res.status, ok, None)
    return out


def run_experiment(cfg: ExperimentConfig, *, workers: int = 1, progress=None) -> list[PointSummary]:
    """Run every (sweep value, realization, scheme) and summarize per (value, scheme).

    Realizations may run on ``workers`` threads; results are gathered in
    realization order, so the output does not depend on scheduling.
    """
    summaries = []
    for value in cfg.values:
        gen = cfg.point(value)
        schemes = list(cfg.schemes)
        if "exhaustive" in schemes and surjection_count(gen.L, gen.K) > EXHAUSTIVE_CAP:
            log.info("%s: exhaustive disabled at %s (too many assignments)", cfg.name, value)
            schemes.remove("exhaustive")
        idx = range(cfg.realizations)
        if workers > 1:
            with cf.ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda i: _solve_realization(cfg, gen, value, i, schemes), idx))
        else:
            results = [_solve_realization(cfg, gen, value, i, schemes) for i in idx]
        if progress is not None:
            progress(value)
        for scheme in schemes:
            summ = PointSummary(value, scheme, [], [], [])
            for i, res in enumerate(results):
                lat, status, ok, err = res[scheme]
                summ.latencies.append(lat)
                summ.statuses.append(status)
                summ.checks_ok.append(ok)
                if err is not None:
                    summ.failures.append({"realization": i, "error": err})
            summaries.append(summ)
    return summaries


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def to_csv(summaries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for s in summaries:
        row = s.row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def ordering_violations(summaries, rtol: float = ORDER_RTOL) -> list[dict]:
    """Realizations where some scheme beats exhaustive search by more than ``rtol``."""
    by_value = {}
    for s in summaries:
        by_value.setdefault(s.sweep_value, {})[s.scheme] = s
    out = []
    for value, schemes in by_value.items():
        ex = schemes.get("exhaustive")
        if ex is None:
            continue
        for name, s in schemes.items():
            if name in ("exhaustive", "local", "fixed"):
                continue
            for i, (a, b) in enumerate(zip(ex.latencies, s.latencies)):
                if a is not None and b is not None and b < a * (1 - rtol):
                    out.append({"sweep_value": value, "scheme": name, "realization": i,
                                "exhaustive": a, "other": b})
    return out


def sidecar(cfg: ExperimentConfig, summaries) -> dict:
    """JSON companion to the CSV: config, per-realization values and audit results."""
    return {
        "config": cfg.to_dict(),
        "columns": list(CSV_COLUMNS),
        "points": [
            {
                "sweep_value": s.sweep_value,
                "scheme": s.scheme,
                "latency_s": s.latencies,
                "status": s.statuses,
                "check_ok": s.checks_ok,
                "failures": s.failures,
            }
            for s in summaries
        ],
        "all_checks_ok": all(all(s.checks_ok) for s in summaries),
        "ordering_violations": ordering_violations(summaries),
    }


def write_outputs(cfg: ExperimentConfig, summaries, csv_path) -> tuple[Path, Path]:
    """Write ``csv_path`` and its ``.json`` sidecar; returns both paths."""
    csv_path = Path(csv_path)
    csv_path.write_text(to_csv(summaries), newline="")
    side = csv_path.with_suffix(".json")
    side.write_text(json.dumps(sidecar(cfg, summaries), indent=1, allow_nan=False) + "\n")
    return csv_path, side


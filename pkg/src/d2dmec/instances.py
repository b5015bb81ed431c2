"""Random scenario generation and the ``.scn.json`` file format.

Channels follow a log-distance pathloss ``128.1 + 37.6 log10(d_km)`` dB with
independent Rayleigh fading on the uplink and downlink. Energies in configs
are given in dB relative to 1 J, noise PSD in dBm/Hz.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Scenario

SCHEMA_VERSION = 1
MIN_DISTANCE_KM = 1e-3


def db_to_joule(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def noise_power(psd_dbm_hz: float, B: float) -> float:
    """Receiver noise power in watts over bandwidth ``B``."""
    return 10.0 ** ((psd_dbm_hz + 10.0 * math.log10(B) - 30.0) / 10.0)


def pathloss_db(d_km, a: float = 128.1, b: float = 37.6):
    d = np.maximum(np.asarray(d_km, dtype=float), MIN_DISTANCE_KM)
    return a + b * np.log10(d)


@dataclass(frozen=True)
class GenConfig:
    """Distribution of random scenarios.

    Every ``*_range`` is a closed interval sampled uniformly. Setting both
    ends equal pins the value (e.g. ``C_range=(5e6, 5e6)`` for equal tasks).
    """

    K: int = 2
    L: int = 5
    distance_km: tuple[float, float] = (0.0, 0.5)
    pathloss: tuple[float, float] = (128.1, 37.6)
    B: float = 312500.0
    noise_psd_dbm_hz: float = -169.0
    T_range: tuple[float, float] = (0.0, 1e4)
    R_range: tuple[float, float] = (0.0, 1e4)
    C_range: tuple[float, float] = (0.0, 5e6)
    E0_db: float = -30.0
    Ek_db: float = -20.0
    f0max: float = 0.9e9
    fmax_range: tuple[float, float] = (1.5e9, 2e9)
    kappa: float = 1e-28
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.L < self.K + 1:
            raise ValueError("L must be >= K + 1")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name.endswith("_range") or f.name in ("distance_km", "pathloss"):
                if len(v) != 2:
                    raise ValueError(f"{f.name} needs two entries")
                object.__setattr__(self, f.name, (float(v[0]), float(v[1])))
                if f.name != "pathloss" and v[0] > v[1]:
                    raise ValueError(f"{f.name} is empty: {v}")
        if self.B <= 0 or self.f0max <= 0 or self.kappa <= 0 or self.fmax_range[0] <= 0:
            raise ValueError("B, f0max, kappa and fmax must be positive")

    def replace(self, **kw) -> "GenConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d) -> "GenConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown GenConfig fields: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for realization ``index`` of an experiment."""
    return np.random.default_rng([int(seed), int(index)])


def gen_scenario(cfg: GenConfig, rng: np.random.Generator | None = None) -> Scenario:
    """Draw one scenario; ``rng`` defaults to a generator seeded by ``cfg.seed``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    K, L = cfg.K, cfg.L

    def uni(lo_hi, size):
        return rng.uniform(lo_hi[0], lo_hi[1], size)

    # draw order is fixed so sweeps over one field reuse every other draw
    d = uni(cfg.distance_km, K)
    fade_up = (rng.standard_normal(K) ** 2 + rng.standard_normal(K) ** 2) / 2.0
    fade_dn = (rng.standard_normal(K) ** 2 + rng.standard_normal(K) ** 2) / 2.0
    T = uni(cfg.T_range, L)
    R = uni(cfg.R_range, L)
    C = uni(cfg.C_range, L)
    fmax = uni(cfg.fmax_range, K)

    sigma2 = noise_power(cfg.noise_psd_dbm_hz, cfg.B)
    pl = 10.0 ** (-pathloss_db(d, *cfg.pathloss) / 10.0)
    return Scenario(
        T=T,
        R=R,
        C=C,
        hbar=pl * fade_up / sigma2,
        gbar=pl * fade_dn / sigma2,
        E0=float(db_to_joule(cfg.E0_db)),
        E=np.full(K, float(db_to_joule(cfg.Ek_db))),
        f0max=cfg.f0max,
        fmax=fmax,
        kappa0=cfg.kappa,
        kappa=np.full(K, cfg.kappa),
        B=cfg.B,
    )


# ---------------------------------------------------------------------------
# serialization

_FIELDS = ("T", "R", "C", "hbar", "gbar", "E0", "E", "f0max", "fmax", "kappa0", "kappa", "B")
_UNITS = {
    "T": "bit", "R": "bit", "C": "cycle", "hbar": "1/W", "gbar": "1/W", "E0": "J", "E": "J",
    "f0max": "Hz", "fmax": "Hz", "kappa0": "J s^2/cycle^3", "kappa": "J s^2/cycle^3", "B": "Hz",
}


class ScenarioFormatError(ValueError):
    pass


def scenario_to_json(scn: Scenario, *, seed=None, meta=None) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "seed": seed, "units": _UNITS, "K": scn.K, "L": scn.L}
    doc.update(scn.to_dict())
    if meta:
        doc["meta"] = meta
    # repr-exact floats keep the round trip lossless
    return json.dumps(doc, indent=2) + "\n"


def scenario_from_json(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        ctx = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else ""
        raise ScenarioFormatError(f"{source}:{e.lineno}:{e.colno}: {e.msg}\n    {ctx}") from None
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"{source}: top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioFormatError(f"{source}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    missing = [f for f in _FIELDS if f not in doc]
    if missing:
        raise ScenarioFormatError(f"{source}: missing field(s) {', '.join(missing)}")
    try:
        scn = Scenario(**{f: doc[f] for f in _FIELDS})
    except (TypeError, ValueError) as e:
        raise ScenarioFormatError(f"{source}: {e}") from None
    for key in ("K", "L"):
        if key in doc and doc[key] != getattr(scn, key):
            raise ScenarioFormatError(f"{source}: {key}={doc[key]} disagrees with array lengths")
    return scn


def save_scenario(path, scn: Scenario, *, seed=None, meta=None) -> None:
    Path(path).write_text(scenario_to_json(scn, seed=seed, meta=meta))


def load_scenario(path) -> Scenario:
    p = Path(path)
    return scenario_from_json(p.read_text(), str(p))

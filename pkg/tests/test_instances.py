import json

import numpy as np
import pytest

from d2dmec.instances import (
    GenConfig,
    ScenarioFormatError,
    gen_scenario,
    load_scenario,
    noise_power,
    pathloss_db,
    realization_rng,
    save_scenario,
    scenario_from_json,
    scenario_to_json,
)

from conftest import FIXTURES, scenario


def test_pathloss_at_100_m():
    assert pathloss_db(0.1) == pytest.approx(90.5, abs=1e-12)


def test_pathloss_clamps_zero_distance():
    assert np.isfinite(pathloss_db(0.0))
    assert pathloss_db(0.0) == pathloss_db(1e-3)


def test_noise_power():
    assert noise_power(-169.0, 312500.0) == pytest.approx(3.93e-15, rel=2e-3)


def test_generator_statistics():
    K = 10_000
    cfg = GenConfig(K=K, L=K + 1, distance_km=(0.1, 0.1))
    scn = gen_scenario(cfg, np.random.default_rng(0))
    gain = 10 ** (-90.5 / 10) / noise_power(-169.0, 312500.0)
    assert np.mean(scn.hbar / gain) == pytest.approx(1.0, rel=0.02)
    assert np.mean(scn.gbar / gain) == pytest.approx(1.0, rel=0.02)
    assert np.mean(scn.T) == pytest.approx(5e3, rel=0.02)
    assert np.mean(scn.C) == pytest.approx(2.5e6, rel=0.02)
    assert scn.fmax.min() >= 1.5e9 and scn.fmax.max() <= 2e9
    assert scn.E0 == pytest.approx(1e-3) and np.all(scn.E == pytest.approx(1e-2))


def test_generator_is_deterministic_per_realization():
    a = scenario(2, 5, seed=3, index=4)
    b = scenario(2, 5, seed=3, index=4)
    c = scenario(2, 5, seed=3, index=5)
    np.testing.assert_array_equal(a.T, b.T)
    assert not np.array_equal(a.T, c.T)


def test_pinned_range():
    scn = scenario(2, 5, seed=0, C_range=(5e6, 5e6))
    assert np.all(scn.C == 5e6)


def test_sweeping_energy_reuses_other_draws():
    a = scenario(2, 5, seed=0, Ek_db=-40.0)
    b = scenario(2, 5, seed=0, Ek_db=-10.0)
    np.testing.assert_array_equal(a.hbar, b.hbar)
    np.testing.assert_array_equal(a.C, b.C)


def test_genconfig_validation():
    with pytest.raises(ValueError):
        GenConfig(K=2, L=2)
    with pytest.raises(ValueError):
        GenConfig(T_range=(5.0, 1.0))
    with pytest.raises(ValueError):
        GenConfig.from_dict({"K": 2, "bogus": 1})
    cfg = GenConfig.from_dict(GenConfig(K=3, L=7).to_dict())
    assert cfg == GenConfig(K=3, L=7)


def test_round_trip_exact(tmp_path):
    scn = scenario(3, 6, seed=9)
    path = tmp_path / "a.scn.json"
    save_scenario(path, scn, seed=9)
    back = load_scenario(path)
    for f in ("T", "R", "C", "hbar", "gbar", "E", "fmax", "kappa"):
        np.testing.assert_array_equal(getattr(back, f), getattr(scn, f))
    assert back.E0 == scn.E0 and back.B == scn.B


def test_serialization_is_byte_identical(tmp_path):
    scn = scenario(2, 4, seed=1)
    text = scenario_to_json(scn, seed=1)
    assert scenario_to_json(scenario_from_json(text), seed=1) == text
    p1, p2 = tmp_path / "1.scn.json", tmp_path / "2.scn.json"
    save_scenario(p1, scn, seed=1)
    save_scenario(p2, load_scenario(p1), seed=1)
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_field():
    doc = json.loads(scenario_to_json(scenario()))
    del doc["gbar"]
    with pytest.raises(ScenarioFormatError, match="gbar"):
        scenario_from_json(json.dumps(doc))


def test_malformed_json_reports_line():
    text = scenario_to_json(scenario()).replace('"E0": ', '"E0": ,', 1)
    with pytest.raises(ScenarioFormatError) as info:
        scenario_from_json(text, "bad.scn.json")
    msg = str(info.value)
    line = next(i for i, l in enumerate(text.splitlines(), 1) if '"E0"' in l)
    assert f"bad.scn.json:{line}:" in msg
    assert '"E0"' in msg


def test_version_mismatch():
    doc = json.loads(scenario_to_json(scenario()))
    doc["schema_version"] = 99
    with pytest.raises(ScenarioFormatError, match="schema_version"):
        scenario_from_json(json.dumps(doc))


def test_shape_disagreement():
    doc = json.loads(scenario_to_json(scenario(2, 5)))
    doc["L"] = 6
    with pytest.raises(ScenarioFormatError, match="L=6"):
        scenario_from_json(json.dumps(doc))


def test_fixture_loads(fixture_scn):
    assert fixture_scn.K == 1 and fixture_scn.L == 2
    assert fixture_scn.E0 == 1e-3
    assert load_scenario(FIXTURES / "k1_l2.scn.json").B == 312500.0


def test_realization_streams_differ():
    a = realization_rng(1, 0).uniform(size=4)
    b = realization_rng(1, 1).uniform(size=4)
    c = realization_rng(2, 0).uniform(size=4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)

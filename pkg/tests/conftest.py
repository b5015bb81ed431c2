import functools
from pathlib import Path

import numpy as np
import pytest

from d2dmec.instances import GenConfig, gen_scenario, load_scenario, realization_rng

FIXTURES = Path(__file__).parent / "fixtures"


def scenario(K=2, L=5, seed=0, index=0, **kw):
    return gen_scenario(GenConfig(K=K, L=L, **kw), realization_rng(seed, index))


@functools.lru_cache(maxsize=None)
def solved_k2l5(seed, index):
    """Joint and exhaustive results on one K=2, L=5 instance (cached across tests)."""
    from d2dmec.heuristics import exhaustive_optimal
    from d2dmec.relax import algorithm1

    scn = scenario(2, 5, seed, index)
    return scn, algorithm1(scn), exhaustive_optimal(scn)


@pytest.fixture
def fixture_scn():
    return load_scenario(FIXTURES / "k1_l2.scn.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

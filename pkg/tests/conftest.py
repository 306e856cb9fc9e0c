from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tokenroll.config import load_config
from tokenroll.ncs import PlantModel
from tokenroll.token_bucket import TokenBucketSpec

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
DATA = Path(__file__).resolve().parent / "data"

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def spec22():
    return TokenBucketSpec(22, 8, 3)


@pytest.fixture
def double_integrator():
    return PlantModel([[1.0, 0.1], [0.0, 1.0]], [[0.005], [0.1]])


@pytest.fixture(scope="session")
def config_path():
    return lambda name: CONFIGS / f"{name}.toml"


@pytest.fixture(scope="session")
def load_preset():
    cache = {}

    def load(name):
        if name not in cache:
            cache[name] = load_config(CONFIGS / f"{name}.toml")
        return cache[name]

    return load


def random_stabilizable(rng, n, m):
    """Random plant with a controllable pair; spectral radius up to about 1.2."""
    while True:
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.3, 1.2) / max(abs(np.linalg.eigvals(A)))
        B = rng.standard_normal((n, m))
        ctrb = np.hstack([np.linalg.matrix_power(A, i) @ B for i in range(n)])
        if np.linalg.matrix_rank(ctrb) == n:
            return A, B


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

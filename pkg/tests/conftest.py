import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance tests append "criterion N: PASS|FAIL ..." lines here
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_dataset(n=6, p=2, q=2, T=5, seed=0, alpha=0.8, phi=4.0):
    from dynstack.simulate import GeneratorSpec, generate_dataset
    sigma = np.eye(q) + 0.3 * (np.ones((q, q)) - np.eye(q))
    spec = GeneratorSpec(n=n, q=q, T=T, p=p, alpha_true=alpha, phi_true=phi, sigma_true=sigma,
                         seed=seed, horizon=5)
    return generate_dataset(spec)


@pytest.fixture
def small_data():
    return make_dataset()

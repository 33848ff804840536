import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from romes import hifi

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_op():
    """9x9 grid: n = 90 dofs, cheap enough for dense oracles."""
    return hifi.assemble_affine_components(hifi.build_mesh(9))


@pytest.fixture(scope="session")
def tiny_op():
    return hifi.assemble_affine_components(hifi.build_mesh(3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_mu(rng, n=None):
    lo, hi = hifi.PARAM_BOX
    return rng.uniform(lo, hi, hifi.N_BLOCKS if n is None else (n, hifi.N_BLOCKS))


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from shared.constants import PROBLEMS
from shared.forward_problems import build_scenario, dense_scenario

SEED = 20240101

TAU4 = (1.0, 0.5, 0.25, 0.125)
PHI4 = (1.0, 0.6, 0.4, 0.3)
SOURCE4 = (0.8, 0.5, 0.4, 0.3)

TAU8 = (1.0, 0.7, 0.5, 0.35, 0.25, 0.18, 0.12, 0.08)
PHI8 = (0.9, -0.4, 0.5, 0.2, -0.3, 0.25, 0.1, -0.15)
SOURCE8 = (0.6, 0.3, -0.2, 0.4, 0.1, -0.2, 0.3, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def dense3():
    return dense_scenario((1.0, 0.4, 0.1), (0.8, 0.5, 0.3), (0.5, 0.5, 0.2))


@pytest.fixture
def dense4():
    return dense_scenario(TAU4, PHI4, SOURCE4)


@pytest.fixture
def dense8():
    return dense_scenario(TAU8, PHI8, SOURCE8)


@pytest.fixture(params=PROBLEMS)
def small_scenario(request):
    return build_scenario(request.param, 256)


@pytest.fixture(scope='session')
def full_scenarios():
    """Shipped scenarios at N=1024, keyed by (problem, beta)"""
    from shared.constants import PROBLEM_DEFAULTS
    return {
        (name, beta): build_scenario(name, 1024, beta=beta)
        for name in PROBLEMS
        for beta in PROBLEM_DEFAULTS[name]['betas']
    }

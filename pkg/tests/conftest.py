import numpy as np
import pytest

from bamp_ris import SceneDims, default_priors, make_scene

# small noiseless instance used by several oracle checks
ORACLE_DIMS = SceneDims(m=4, k=16, n=8, t=24, t_pilot=12, k_anchor=8)
ORACLE_SPARSITY = 0.3
ORACLE_SEED = 0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def oracle_scene():
    return make_scene(ORACLE_DIMS, default_priors(ORACLE_SPARSITY), 1, float("inf"), ORACLE_SEED)


@pytest.fixture
def small_scene():
    return make_scene(SceneDims(m=4, k=20, n=10, t=16, t_pilot=8, k_anchor=6), default_priors(), 1, 20.0, 7)

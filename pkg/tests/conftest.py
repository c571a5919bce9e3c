import numpy as np
import pytest

from helpers import DESK_DP, oracle_trained_basis, random_phantom_spec

from elasto import DeformationSpec, synthesize_pair


@pytest.fixture(scope="session")
def desk_basis():
    """12-mode basis shared by the pipeline-level unit tests."""
    return oracle_trained_basis()


@pytest.fixture(scope="session")
def compression_pair():
    spec = random_phantom_spec(np.random.default_rng(7))
    return synthesize_pair(spec, DeformationSpec("axial_compression", 0.02, rng_seed=7))


@pytest.fixture(scope="session")
def dp_cfg():
    return DESK_DP

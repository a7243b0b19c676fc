import numpy as np
import pytest

from hiermatch.config import PipelineConfig
from hiermatch.synthetic import ScenePairSpec, generate_pair


@pytest.fixture(scope="session")
def small_cfg():
    return PipelineConfig(input_points=2048, n_keypoints=(256, 128, 64), desc_dims=(16, 32, 64))


@pytest.fixture(scope="session")
def pair():
    return generate_pair(ScenePairSpec(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

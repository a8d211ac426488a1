import numpy as np
import pytest

from rsad.model import ModelConfig, init_params
from rsad.training import LossWeights


@pytest.fixture
def tiny_config():
    return ModelConfig(m=3, w=8, h=2, d=5, mlp_hidden=(4,))


@pytest.fixture
def tiny_model(tiny_config):
    return init_params(tiny_config, np.random.default_rng(42))


@pytest.fixture
def unit_weights():
    return LossWeights(alpha=1.0, beta=1.0, gamma=1.0)


def random_window(config, rng):
    return rng.normal(size=(config.m, config.w)), rng.normal(size=(config.m, config.h))

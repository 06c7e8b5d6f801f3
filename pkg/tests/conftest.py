import numpy as np
import pytest

from parahydra import ModelConfig, ParaHydra, TOY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def micro_cfg():
    """Smallest configuration that still exercises every context path."""
    return ModelConfig(channels=8, slices=4, window=5, ep_hidden=8, seed=3)


@pytest.fixture(scope="session")
def toy_model():
    return ParaHydra(TOY)


@pytest.fixture(scope="session")
def micro_model(micro_cfg):
    return ParaHydra(micro_cfg)

import numpy as np
import pytest

from msfspoof import config as C
from msfspoof.experiments import unconfident_trace
from msfspoof.replay import Replay
from msfspoof.trace import NoiseModel, generate_synthetic_trace


@pytest.fixture(scope="session")
def kf():
    return C.kf_config()


@pytest.fixture(scope="session")
def noise_free_trace():
    return generate_synthetic_trace(300.0, C.scenario(), NoiseModel())


@pytest.fixture(scope="session")
def noisy_trace():
    return generate_synthetic_trace(60.0, C.scenario(), C.noise_model())


@pytest.fixture(scope="session")
def campaign_trace():
    return unconfident_trace()


@pytest.fixture(scope="session")
def campaign_replay(campaign_trace, kf):
    return Replay(campaign_trace, kf)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))

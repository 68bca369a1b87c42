import pytest

from private_bandits.core_noise import NoiseSource, ZeroNoiseSource
from private_bandits.env import BanditEnvironment, make_environment


@pytest.fixture
def zero_noise():
    return ZeroNoiseSource(0)


@pytest.fixture
def noise():
    return NoiseSource(12345)


@pytest.fixture
def c1_deterministic():
    return make_environment("c1", 5, deterministic=True)


@pytest.fixture
def two_arm_env():
    return BanditEnvironment([0.75, 0.25], name="two_arm")

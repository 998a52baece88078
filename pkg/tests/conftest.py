import numpy as np
import pytest

from synthworld import SynthWorld

from ecvlroute.synthgen import SynthSpec


@pytest.fixture(scope="session")
def small_world():
    return SynthWorld(SynthSpec(n_records=240, seed=11))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)

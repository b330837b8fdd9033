import numpy as np
import pytest

from hetnet_jpcs.model import (Assignment, NetworkInstance, PowerAllocation,
                               SolverConfig, assignment_from_tuples)


def make_instance(seed=0, users=2, cells=2, subchannels=2, antennas=2,
                  noise=1e-15, gain_scale=1e-10):
    """Random tiny instance built directly (independent of the generator)."""
    rng = np.random.default_rng(seed)
    gain = gain_scale * rng.exponential(size=(users, cells + 1, subchannels, antennas))
    return NetworkInstance(gain, noise)


def tiny_config(**kw):
    base = dict(p_max=0.2, i_th=1e-12, r_min=0.0, eps_outer=0.1,
                eps_power=1e-3, seed=0)
    base.update(kw)
    return SolverConfig(**base)


@pytest.fixture
def inst2x2():
    return make_instance(seed=1)


@pytest.fixture
def cfg0():
    return tiny_config()

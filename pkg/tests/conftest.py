"""Shared fixtures: cheap simulation configs and a tiny session LUT."""

import numpy as np
import pytest

from dermalight import space, transport


@pytest.fixture(scope="session")
def fast_cfg():
    """A low-photon config for tests that only need plausible albedos."""
    return transport.SimConfig(photons_per_band=100, seed=13)


@pytest.fixture(scope="session")
def small_lut(fast_cfg):
    """A coarse (3,3,2,2,2) LUT shared across the unit-test session."""
    return space.build_lut((3, 3, 2, 2, 2), fast_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)

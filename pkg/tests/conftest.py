import numpy as np
import pytest

from ofdm_pnt.grid import Constellation, OfdmParams, ResourceGrid

FIG2_PILOTS = [3, 12, 22, 31, 32, 40, 49, 58]


@pytest.fixture(scope="session")
def qpsk():
    return Constellation.qpsk()


@pytest.fixture(scope="session")
def k64():
    return OfdmParams(64, 1, 15e3, 6.25e-6)


@pytest.fixture(scope="session")
def k240():
    return OfdmParams(240, 4, 240e3, 156.25e-9)


@pytest.fixture(scope="session")
def fig2_grid(k64):
    return ResourceGrid.from_pilot_subcarriers(k64, FIG2_PILOTS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest

from fluidrefine import constraint, hs, synth
from fluidrefine.fields import FlowField, ScalarField

HALF = 250
CENTER_ROW = 125


@pytest.fixture(scope="session")
def oseen_half():
    """Half-scale Oseen pair (250 px, core radius 7.5)."""
    return synth.oseen_pair(HALF)


@pytest.fixture(scope="session")
def hs_half(oseen_half):
    return hs.hs_solve(oseen_half.frame1, oseen_half.frame2)


@pytest.fixture(scope="session")
def bca_half(oseen_half, hs_half):
    return constraint.bca_run(oseen_half.frame1, oseen_half.frame2, w0=hs_half)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ramp(n=16, slope=1.0):
    x = np.arange(n, dtype=float)
    return ScalarField(np.broadcast_to(slope * x[None, :], (n, n)).copy())


def uniform_flow(n, u=1.0, v=0.0):
    return FlowField.from_arrays(np.full((n, n), u), np.full((n, n), v))

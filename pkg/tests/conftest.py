import numpy as np
import pytest

from spsemi.eikonal import QuadraticPotentialSpec
from spsemi.spectral import Grid, SpectralField
from spsemi.wkb import Scenario


def smooth_scenario(dim=1, n=16, q=1.0, doping=0.1, amp=0.05, phase=0.05, **kw):
    """``a0 = 1 + 2 amp cos x1``, ``phi0 = 2 phase sin x1``, ``c = 1 + 2 doping cos x1``."""
    grid = Grid(dim, n)
    x1 = grid.mesh[0]
    pot = kw.pop("pot", None) or QuadraticPotentialSpec.zero(dim)
    return Scenario(
        grid=grid,
        a0=SpectralField(grid, 1 + 2 * amp * np.cos(x1) + 0j),
        phi0=SpectralField(grid, 2 * phase * np.sin(x1) + 0j),
        pot_quad=pot,
        doping_tilde=SpectralField(grid, 2 * doping * np.cos(x1) + 0j),
        charge_q=q,
        **kw,
    )


def stationary_scenario(dim=2, n=16, **kw):
    grid = Grid(dim, n)
    return Scenario(
        grid=grid,
        a0=SpectralField.constant(grid, 1.0),
        phi0=SpectralField.zeros(grid),
        pot_quad=QuadraticPotentialSpec.zero(dim),
        **kw,
    )


@pytest.fixture
def smooth1d():
    return smooth_scenario()


@pytest.fixture
def stationary2d():
    return stationary_scenario()

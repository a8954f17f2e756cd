import numpy as np
import pytest

from hartree_rf.core.field_core import Grid, WienerSample, equilibrium_potential, sample_equilibrium
from hartree_rf.core.profiles import MomentumDistribution, PairPotential, build_kernel_h


@pytest.fixture
def grid():
    """Small 2d grid with f^2 resolved at the lattice edge."""
    return Grid(dim=2, n=16, L=8.0)


@pytest.fixture
def gaussian_f():
    """Gaussian momentum profile f^2 = exp(-|xi|^2)."""
    return MomentumDistribution(kind="gaussian", dim=2, T=1.0)


@pytest.fixture
def contact_w():
    """Weak contact interaction."""
    return PairPotential(dim=2, atom_weight=0.5)


@pytest.fixture
def wiener(grid):
    """Wiener sample matched to the small grid."""
    return WienerSample(seed=12345, N=256, shape=grid.shape)


@pytest.fixture
def m(gaussian_f, contact_w, grid):
    """Equilibrium potential of the fixture pair."""
    return equilibrium_potential(gaussian_f, contact_w, grid)


@pytest.fixture
def equilibrium(gaussian_f, grid, wiener, m):
    """Y0 on the small grid."""
    return sample_equilibrium(gaussian_f, grid, wiener, 0.0, m)


@pytest.fixture(scope="session")
def gaussian_kernel():
    """Tabulated h for the 2d Gaussian profile, h(r) = pi exp(-r^2/4)."""
    return build_kernel_h(MomentumDistribution(kind="gaussian", dim=2, T=1.0))


def low_mode_field(grid, N, kmax=2, seed=7):
    """Random ensemble supported on lattice modes with |k_i| <= kmax."""
    rng = np.random.default_rng(seed)
    coeffs = np.zeros((N,) + grid.shape, dtype=np.complex128)
    k = np.abs(grid.k_axis)
    mask = np.ix_(*([k <= kmax] * grid.dim))
    block = coeffs[(slice(None),) + mask]
    block[...] = rng.standard_normal(block.shape) + 1j * rng.standard_normal(block.shape)
    coeffs[(slice(None),) + mask] = block
    return grid.from_fourier(coeffs)

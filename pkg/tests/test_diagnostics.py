import math

import numpy as np
import pytest
from conftest import low_mode_field

from hartree_rf.core.diagnostics import (
    NormSpec,
    basis_modes,
    build_density_operator,
    corollary_check,
    equilibrium_density,
    is_admissible,
    schatten_norm,
    spacetime_norm,
    strichartz_ratio,
    theta_norms,
)
from hartree_rf.core.field_core import EnsembleField, Grid, SpaceTimePotential, sample_equilibrium
from hartree_rf.errors import CutoffTooLarge, GridMismatch, InadmissibleExponents


def test_norm_families():
    """Field, potential and initial-data families per dimension."""
    for dim in (2, 3):
        families = theta_norms(dim)
        assert set(families) == {"Z", "V", "0"}
        assert all(spec.domain == "potential" for spec in families["V"])
    assert any(spec.s == 0.5 for spec in theta_norms(3)["Z"])


def test_constant_field_norms(grid):
    """Rectangle weights: ||1||_{L2_t L2_x L2_w} = sqrt((M + 1) dt L^d)."""
    M, dt = 8, 0.125
    u = np.ones((M + 1, 3) + grid.shape, dtype=np.complex128)
    l2 = spacetime_norm(u, NormSpec(p=2, q=2), grid, dt)
    assert l2 == pytest.approx(math.sqrt((M + 1) * dt * grid.volume))
    sup = spacetime_norm(u, NormSpec(p=math.inf, q=2, s=0.5), grid, dt)
    assert sup == pytest.approx(math.sqrt(grid.volume))
    outside = spacetime_norm(u, NormSpec(p=4, q=4, omega_inside=False), grid, dt)
    assert outside == pytest.approx(((M + 1) * dt * grid.volume) ** 0.25)


def test_potential_norm_and_shape_check(grid):
    """Potentials have no realization axis; wrong shapes are refused."""
    V = np.full((5,) + grid.shape, 2.0)
    spec = NormSpec(p=2, q=2, domain="potential")
    assert spacetime_norm(V, spec, grid, 0.5) == pytest.approx(2.0 * math.sqrt(5 * 0.5 * grid.volume))
    with pytest.raises(GridMismatch):
        spacetime_norm(np.ones((5, 2) + grid.shape), spec, grid, 0.5)


def test_admissibility():
    """2/p + d/q = d/2 - s."""
    assert is_admissible(4.0, 4.0, 0.0, 2)
    assert is_admissible(10 / 3, 10 / 3, 0.0, 3)
    assert is_admissible(math.inf, 2.0, 0.0, 3)
    assert not is_admissible(4.0, 4.0, 0.0, 3)
    assert not is_admissible(1.5, 6.0, 0.0, 3)


def test_strichartz_rejects_inadmissible(grid):
    """Inadmissible exponents raise before any work."""
    with pytest.raises(InadmissibleExponents):
        strichartz_ratio(lambda g: None, [grid], 3.0, 3.0, 0.0, 1.0, 4)


def test_strichartz_ratio_is_resolution_independent():
    """A band-limited initial field gives the same ratio on every resolved grid."""
    ladder = [Grid(dim=2, n=16, L=8.0), Grid(dim=2, n=32, L=8.0)]
    report = strichartz_ratio(
        lambda g: EnsembleField(g, low_mode_field(g, 4)), ladder, 4.0, 4.0, 0.0, 1.0, 8
    )
    assert report.resolutions == [16, 32]
    assert not report.degenerate
    assert report.spread <= 1e-10
    assert report.stable


def test_strichartz_zero_data_is_degenerate(grid):
    """Zero initial data has no ratio."""
    report = strichartz_ratio(
        lambda g: EnsembleField(g, np.zeros((2,) + g.shape, dtype=np.complex128)),
        [grid], 4.0, 4.0, 0.0, 1.0, 4,
    )
    assert report.degenerate
    assert report.ratios == [None]
    assert not report.stable


def test_basis_cutoff(grid):
    """The cutoff must stay strictly inside the Nyquist radius."""
    modes, cut = basis_modes(grid, None)
    assert cut == pytest.approx(0.5 * grid.nyquist_radius)
    assert np.all(grid.xi_abs.ravel()[modes] <= cut)
    with pytest.raises(CutoffTooLarge):
        basis_modes(grid, grid.nyquist_radius)
    with pytest.raises(CutoffTooLarge):
        basis_modes(grid, 0.0)


def test_equilibrium_density_operator(gaussian_f, grid, equilibrium, wiener):
    """E|Y><Y| is diagonal with (2 pi)^d f^2 on the diagonal, up to Monte-Carlo error."""
    gamma = build_density_operator(equilibrium, 3.0)
    exact = equilibrium_density(gaussian_f, grid, 3.0)
    np.testing.assert_array_equal(gamma.modes, exact.modes)
    assert gamma.hermitian_defect() == 0.0
    assert gamma.min_eigenvalue() >= -1e-10
    diagonal = np.real(np.diag(gamma.matrix))
    reference = np.real(np.diag(exact.matrix))
    assert reference.max() == pytest.approx((2 * math.pi) ** 2)
    assert np.max(np.abs(diagonal - reference)) <= 6.0 * reference.max() / math.sqrt(wiener.N)


def test_schatten_norms(gaussian_f, grid):
    """Diagonal operators: l^p of the weighted diagonal; free conjugation is unitary."""
    gamma = equilibrium_density(gaussian_f, grid, 3.0)
    diag = np.real(np.diag(gamma.matrix))
    assert schatten_norm(gamma, 2.0) == pytest.approx(np.sqrt(np.sum(diag**2)))
    assert schatten_norm(gamma, math.inf) == pytest.approx(diag.max())
    weighted = diag * (1.0 + gamma.xi2)
    assert schatten_norm(gamma, 4.1, s=1.0) == pytest.approx(np.sum(weighted**4.1) ** (1 / 4.1))

    rng = np.random.default_rng(0)
    size = gamma.modes.size
    a = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    op = gamma.with_matrix(a @ a.conj().T)
    moved = op.conjugate_free(0.7, m=1.3)
    assert schatten_norm(moved, 4.1, 0.5) == pytest.approx(schatten_norm(op, 4.1, 0.5), rel=1e-10)
    with pytest.raises(ValueError):
        schatten_norm(op, 0.5)


def test_corollary_check_on_the_equilibrium(gaussian_f, grid, wiener, m, equilibrium):
    """Free equilibrium samples back-propagate onto gamma_Y; with V = 0 and Z+ = 0 gamma_+ vanishes."""
    times = np.linspace(0.0, 1.0, 5)
    samples = [(t, sample_equilibrium(gaussian_f, grid, wiener, t, m)) for t in (0.25, 0.5, 1.0)]
    zero = EnsembleField(grid, np.zeros_like(equilibrium.values))
    report = corollary_check(
        samples, equilibrium, SpaceTimePotential.zeros(grid, times), zero, gaussian_f, m,
        xi_cut=3.0, eps_sweep=[0.5],
    )
    assert report.times == [0.25, 0.5, 1.0]
    assert report.exponents == [4.1, 4.5]
    scale = schatten_norm(build_density_operator(equilibrium, 3.0), 4.1, 0.5)
    for key in ("4.1", "4.5"):
        assert report.gamma_plus_norm[key] == 0.0
        assert max(report.coupled_residual[key]) <= 1e-10 * scale
        assert all(value >= 0.0 for value in report.residual[key])

import math

import numpy as np
import pytest
from conftest import low_mode_field

from hartree_rf.core.field_core import (
    EnsembleField,
    FieldHistory,
    Grid,
    LatticeKernel,
    SpaceTimePotential,
    WienerSample,
    free_stream,
)
from hartree_rf.core.quadratic import (
    J1_fourier,
    J2_fourier,
    Q1_ensemble,
    Q2_ensemble,
    Q2_fourier,
    Q2_self,
    cubic_C1,
    cubic_C1_self,
    cubic_terms,
    kernel_K_norms,
)
from hartree_rf.core.profiles import MomentumDistribution, build_kernel_h
from hartree_rf.errors import CollinearPair, ComplexityGuard, KernelRangeTooShort
from hartree_rf.tools.verification import mode_potentials


@pytest.fixture
def unit_grid():
    """Integer frequency lattice, f resolved to the edge."""
    return Grid(dim=2, n=16, L=2 * math.pi)


@pytest.fixture
def potential_pair(unit_grid):
    """Time-dependent single-mode potentials U, V."""
    times = np.linspace(0.0, 0.5, 9)
    return mode_potentials(unit_grid, times, [[1, 0]], 0.1)


def _l2(values):
    return float(np.sqrt(np.sum(np.abs(values) ** 2)))


def test_split_routes_match_ensemble(gaussian_f, unit_grid, potential_pair):
    """J1 + J2 on the lattice kernel is the ensemble expectation; Q2 adds its endpoint weights."""
    U, V = potential_pair
    wiener = WienerSample(seed=21, N=256, shape=unit_grid.shape)
    kernel = LatticeKernel.from_distribution(gaussian_f, unit_grid)
    split = J1_fourier(U, V, kernel, unit_grid) + J2_fourier(U, V, kernel, unit_grid)
    ensemble = Q2_ensemble(U, V, gaussian_f, unit_grid, wiener, 0.7)
    assert _l2(ensemble.values - split.values) <= 5.0 * _l2(ensemble.scale)
    assert _l2(split.values) > 0.0
    fourier = Q2_fourier(U, V, kernel, unit_grid)
    endpoint = _l2(fourier.values - split.values)
    assert _l2(ensemble.values - fourier.values) <= 5.0 * _l2(ensemble.scale) + endpoint


def test_fourier_route_is_symmetric(gaussian_f, unit_grid, potential_pair):
    """Q2(U, V) = Q2(V, U)."""
    U, V = potential_pair
    kernel = LatticeKernel.from_distribution(gaussian_f, unit_grid)
    np.testing.assert_allclose(
        Q2_fourier(U, V, kernel, unit_grid).values,
        Q2_fourier(V, U, kernel, unit_grid).values,
        atol=1e-13,
    )


def test_fourier_route_of_zero_is_zero(gaussian_f, unit_grid, potential_pair):
    """Vanishing potentials short-circuit."""
    U, _ = potential_pair
    zero = SpaceTimePotential.zeros(unit_grid, U.times)
    kernel = LatticeKernel.from_distribution(gaussian_f, unit_grid)
    assert not Q2_fourier(zero, zero, kernel, unit_grid).values.any()


def test_complexity_guard(gaussian_f, unit_grid, potential_pair):
    """A tiny flop budget refuses the explicit sum."""
    U, V = potential_pair
    kernel = LatticeKernel.from_distribution(gaussian_f, unit_grid)
    with pytest.raises(ComplexityGuard):
        Q2_fourier(U, V, kernel, unit_grid, flop_budget=10.0)


def test_ensemble_Q2_is_bilinear(gaussian_f, unit_grid, potential_pair):
    """Q2(2U, V) = 2 Q2(U, V) and Q2_self is half the symmetric form."""
    U, V = potential_pair
    wiener = WienerSample(seed=3, N=16, shape=unit_grid.shape)
    base = Q2_ensemble(U, V, gaussian_f, unit_grid, wiener, 0.0)
    doubled = Q2_ensemble(2.0 * U, V, gaussian_f, unit_grid, wiener, 0.0)
    np.testing.assert_allclose(doubled.values, 2.0 * base.values, atol=1e-14)
    diagonal = Q2_ensemble(V, V, gaussian_f, unit_grid, wiener, 0.0)
    np.testing.assert_allclose(Q2_self(V, gaussian_f, unit_grid, wiener, 0.0).values, 0.5 * diagonal.values)


def test_Q1_is_linear_in_Z(gaussian_f, unit_grid, potential_pair):
    """Q1(2Z, V) = 2 Q1(Z, V), and Q1 vanishes with V."""
    _, V = potential_pair
    wiener = WienerSample(seed=4, N=8, shape=unit_grid.shape)
    Z0 = EnsembleField(unit_grid, low_mode_field(unit_grid, wiener.N))
    Z = FieldHistory.from_stream(unit_grid, V.times, free_stream(Z0, V.times, 0.0))
    twice = FieldHistory(unit_grid, V.times, 2.0 * Z.values)
    base = Q1_ensemble(Z, V, gaussian_f, wiener, 0.0)
    np.testing.assert_allclose(Q1_ensemble(twice, V, gaussian_f, wiener, 0.0).values, 2.0 * base.values, atol=1e-13)
    zero = SpaceTimePotential.zeros(unit_grid, V.times)
    assert not Q1_ensemble(Z, zero, gaussian_f, wiener, 0.0).values.any()


def test_cubic_dispatch(gaussian_f, unit_grid, potential_pair):
    """A potential third argument selects C1."""
    U, V = potential_pair
    wiener = WienerSample(seed=8, N=8, shape=unit_grid.shape)
    direct = cubic_C1(V, U, V, gaussian_f, unit_grid, wiener, 0.0)
    routed = cubic_terms(V, U, V, gaussian_f, unit_grid, wiener, 0.0)
    np.testing.assert_array_equal(direct.values, routed.values)


def test_kernel_norms_refuse_collinear_pairs(gaussian_kernel):
    """Collinear frequency pairs have no determinant."""
    with pytest.raises(CollinearPair):
        kernel_K_norms([1.0, 0.0], [2.0, 0.0], gaussian_kernel)


def test_kernel_norms_decay_with_scaling(gaussian_kernel):
    """Stretching one frequency shrinks the L2 norm of K."""
    near = kernel_K_norms([1.0, 0.0], [0.0, 1.0], gaussian_kernel, p=2)
    far = kernel_K_norms([8.0, 0.0], [0.0, 1.0], gaussian_kernel, p=2)
    assert far.det == pytest.approx(64.0 * near.det)
    assert far.norm_sq < 0.5 * near.norm_sq
    assert near.to_row()["bound"] == pytest.approx(near.C2 / math.sqrt(near.det))


def test_fourier_route_and_split_differ_by_endpoint_weights(gaussian_kernel, unit_grid):
    """Q2 - (J1 + J2) comes from the two corner weights of the time square and scales as dt^2."""
    differences, peak = [], 0.0
    for steps in (8, 16):
        times = np.linspace(0.0, 0.5, steps + 1)
        U, V = mode_potentials(unit_grid, times, [[1, 0]], 0.1)
        fourier = Q2_fourier(U, V, gaussian_kernel, unit_grid)
        j1 = J1_fourier(U, V, gaussian_kernel, unit_grid)
        split = j1 + J2_fourier(U, V, gaussian_kernel, unit_grid)
        differences.append((fourier - split).values)
        peak = max(peak, float(np.max(np.abs(fourier.values))))
    coarse, fine = differences
    assert np.max(np.abs(coarse)) > 1e-6 * peak
    np.testing.assert_allclose(fine[::2], coarse / 4.0, rtol=0.0, atol=1e-10 * peak)


def test_fourier_route_cancels_spatially_constant_potentials(gaussian_f, unit_grid):
    """Flat U and V have theta = 0 on every contributing mode, so Q2 vanishes exactly."""
    times = np.linspace(0.0, 0.5, 9)
    U = SpaceTimePotential.from_time_profile(unit_grid, times, lambda t: 0.2 + np.sin(t))
    V = SpaceTimePotential.from_time_profile(unit_grid, times, lambda t: 1.0 - t)
    kernel = LatticeKernel.from_distribution(gaussian_f, unit_grid)
    assert not Q2_fourier(U, V, kernel, unit_grid).values.any()


def test_short_kernel_table_is_refused(gaussian_kernel, unit_grid, potential_pair):
    """h tabulated short of 4 T max|xi| raises unless truncation is requested."""
    U, V = potential_pair
    short = build_kernel_h(MomentumDistribution(kind="gaussian", dim=2, T=1.0), r_hmax=4.0)
    with pytest.raises(KernelRangeTooShort):
        Q2_fourier(U, V, short, unit_grid)
    with pytest.raises(KernelRangeTooShort):
        J1_fourier(U, V, short, unit_grid)
    truncated = Q2_fourier(U, V, short, unit_grid, truncate=True)
    assert np.all(np.isfinite(truncated.values))
    assert Q2_fourier(U, V, gaussian_kernel, unit_grid).values.any()


def test_cubic_C1_on_the_diagonal_is_the_self_term(gaussian_f, unit_grid, potential_pair):
    """C1(V, V, V) = C1(V)."""
    _, V = potential_pair
    wiener = WienerSample(seed=8, N=8, shape=unit_grid.shape)
    diagonal = cubic_C1(V, V, V, gaussian_f, unit_grid, wiener, 0.0)
    single = cubic_C1_self(V, gaussian_f, unit_grid, wiener, 0.0)
    scale = float(np.max(np.abs(single.values)))
    assert scale > 0.0
    np.testing.assert_allclose(diagonal.values, single.values, rtol=0.0, atol=1e-12 * scale)


def test_cubic_C1_is_trilinear(gaussian_f, unit_grid, potential_pair):
    """C1 scales in each slot and is additive in the last one."""
    U, V = potential_pair
    wiener = WienerSample(seed=9, N=8, shape=unit_grid.shape)

    def C1(a, b, c):
        return cubic_C1(a, b, c, gaussian_f, unit_grid, wiener, 0.0).values

    base = C1(V, U, V)
    atol = 1e-12 * float(np.max(np.abs(base)))
    np.testing.assert_allclose(C1(3.0 * V, U, V), 3.0 * base, rtol=0.0, atol=3 * atol)
    np.testing.assert_allclose(C1(V, -2.0 * U, V), -2.0 * base, rtol=0.0, atol=2 * atol)
    np.testing.assert_allclose(C1(V, U, 0.5 * V), 0.5 * base, rtol=0.0, atol=atol)
    np.testing.assert_allclose(C1(V, U, U + V), C1(V, U, U) + base, rtol=0.0, atol=10 * atol)


def test_kernel_norms_follow_the_determinant_scaling(gaussian_kernel):
    """For orthogonal eta, eta2 the L2 norm of K decays like 1/lambda, below 10 x the bound."""
    scales = np.array([1.0, 2.0, 4.0, 8.0])
    norms = []
    for lam in scales:
        sample = kernel_K_norms([3.0 * lam, 0.0], [0.0, 1.0], gaussian_kernel, p=2)
        assert sample.det == pytest.approx(9.0 * lam**2)
        assert sample.norm_sq <= 10.0 * sample.bound
        norms.append(sample.norm_sq)
    slope = np.polyfit(np.log(scales), np.log(norms), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.05)


def test_C1_is_bounded_by_the_first_moment(gaussian_kernel):
    """C_1(h) <= 4 pi (int r |h|)^2; the Gaussian h has int r|h| = 2 pi."""
    assert gaussian_kernel.I1 == pytest.approx(2 * math.pi, rel=1e-6)
    assert 0.0 < gaussian_kernel.C1 <= 4 * math.pi * gaussian_kernel.I1**2

import itertools
import logging
import math

import numpy as np
import pytest
from scipy.integrate import quad

from hartree_rf.core.field_core import (
    Grid,
    SpaceTimePotential,
    WienerSample,
    duhamel_stream,
    ensemble_estimate,
    equilibrium_potential,
    equilibrium_stream,
    real_inner,
)
from hartree_rf.core.linear_response import (
    apply_L2,
    compute_mf,
    epsilon_h,
    invert_id_minus_L2,
    kernel_time_domain,
    linear_cancellation_diag,
    padded_length,
    response_symbol_for,
)
from hartree_rf.core.profiles import MomentumDistribution, PairPotential, build_kernel_h
from hartree_rf.errors import GridMismatch, NotStabilized, ResonantSymbol


def gaussian_h(s):
    return math.pi * math.exp(-s * s / 4.0)


def direct_mf(omega, xi):
    """Reference m_f by adaptive quadrature of the exact 2d Gaussian kernel."""
    c = 1.0 / (2.0 * xi)
    re = quad(lambda s: math.cos(omega * c * s) * math.sin(xi * s / 2) * gaussian_h(s), 0, 60, limit=400)[0]
    im = quad(lambda s: -math.sin(omega * c * s) * math.sin(xi * s / 2) * gaussian_h(s), 0, 60, limit=400)[0]
    return -(re + 1j * im) / xi


@pytest.fixture
def unit_grid():
    """Grid whose lattice frequencies are the integers."""
    return Grid(dim=2, n=16, L=2 * math.pi)


def cosine_potential(grid, times, profile):
    spatial = np.cos(grid.x_vectors[0])
    return SpaceTimePotential(grid, times, profile(times)[:, None, None] * spatial)


def test_mf_matches_direct_quadrature(gaussian_kernel):
    """Filon tabulation agrees with adaptive quadrature."""
    omega = np.array([-3.0, 0.0, 0.7, 5.0])
    xi = np.array([0.5, 1.0, 2.5])
    symbol = compute_mf(gaussian_kernel, omega, xi)
    for i, w in enumerate(omega):
        for j, x in enumerate(xi):
            expected = direct_mf(w, x)
            assert abs(symbol.values[i, j] - expected) <= 1e-5 * gaussian_kernel.I0 / x


def test_mf_conjugate_symmetry(gaussian_kernel):
    """m_f(-omega) = conj(m_f(omega))."""
    symbol = compute_mf(gaussian_kernel, np.array([-2.0, 2.0]), np.array([1.0]))
    assert symbol.values[0, 0] == pytest.approx(np.conj(symbol.values[1, 0]))


def test_epsilon_levels(gaussian_kernel):
    """eps_h is read at the finest level of a nine-level trend."""
    report = epsilon_h(gaussian_kernel, points=16)
    assert len(report.trend) == 9
    assert report.value == report.trend[-1]
    assert report.ray_value >= 0.0


def _causal_convolution(kernel, xi, profile, times):
    """int_0^t K(t - s) a(s) ds by adaptive quadrature."""
    return np.array(
        [
            quad(
                lambda s: kernel_time_domain(kernel, xi, np.array([t - s]))[0] * profile(s),
                0.0,
                t,
                epsabs=1e-13,
                limit=400,
            )[0]
            if t > 0
            else 0.0
            for t in times
        ]
    )


def test_L2_matches_time_domain_convolution(gaussian_kernel, unit_grid):
    """On band-limited profiles L2 is the causal convolution with K, mode by mode, to 1e-6."""
    w = PairPotential(dim=2, atom_weight=1.0)
    times = np.linspace(0.0, 4.0, 65)
    a = lambda t: np.exp(-((t - 2.0) ** 2) / (2.0 / 9.0))
    b = lambda t: np.sin(3.0 * t) * np.exp(-((t - 2.0) ** 2) / 0.25)
    x, y = unit_grid.x_vectors
    first, second = np.cos(x), np.sin(x + 2.0 * y)
    values = a(times)[:, None, None] * first + b(times)[:, None, None] * second
    V = SpaceTimePotential(unit_grid, times, values)
    symbol = response_symbol_for(unit_grid, times, gaussian_kernel)
    assert symbol.padded_length == padded_length(65)

    result = apply_L2(V, w, symbol).values
    for spatial, profile, xi in ((first, a, 1.0), (second, b, math.sqrt(5.0))):
        amplitude = 2.0 * np.mean(result * spatial, axis=(1, 2))
        expected = _causal_convolution(gaussian_kernel, xi, profile, times)
        assert np.max(np.abs(amplitude - expected)) <= 1e-6 * np.max(np.abs(expected))


def test_inverse_solves_the_discrete_system(gaussian_kernel, unit_grid):
    """(Id - L2) applied to (Id - L2)^-1 V returns V."""
    w = PairPotential(dim=2, atom_weight=0.5)
    times = np.linspace(0.0, 2.0, 33)
    V = cosine_potential(unit_grid, times, lambda t: np.sin(3.0 * t) + 0.5)
    symbol = response_symbol_for(unit_grid, times, gaussian_kernel)
    solution, margin = invert_id_minus_L2(V, w, symbol)
    assert margin.passed
    residual = solution.values - apply_L2(solution, w, symbol).values - V.values
    assert np.max(np.abs(residual)) <= 1e-10 * np.max(np.abs(V.values))


def test_resonant_symbol_is_refused(gaussian_kernel, unit_grid):
    """A margin below c_min stops the inversion."""
    w = PairPotential(dim=2, atom_weight=0.5)
    times = np.linspace(0.0, 1.0, 9)
    symbol = response_symbol_for(unit_grid, times, gaussian_kernel)
    V = SpaceTimePotential.zeros(unit_grid, times)
    with pytest.raises(ResonantSymbol):
        invert_id_minus_L2(V, w, symbol, c_min=1e6)


def test_symbol_must_match_time_nodes(gaussian_kernel, unit_grid):
    """A symbol tabulated for other nodes is refused."""
    w = PairPotential(dim=2, atom_weight=0.5)
    symbol = response_symbol_for(unit_grid, np.linspace(0.0, 1.0, 9), gaussian_kernel)
    V = SpaceTimePotential.zeros(unit_grid, np.linspace(0.0, 1.0, 17))
    with pytest.raises(GridMismatch):
        apply_L2(V, w, symbol)


def test_linear_cancellation(gaussian_f, grid, contact_w):
    """A flat potential produces no linear density response but a growing W_V(Y)."""
    wiener = WienerSample(seed=5, N=128, shape=grid.shape)
    m = equilibrium_potential(gaussian_f, contact_w, grid)
    times = np.linspace(0.0, 1.0, 17)
    V = SpaceTimePotential.from_time_profile(grid, times, lambda t: 0.3 * (1.0 + t))
    report = linear_cancellation_diag(V, gaussian_f, grid, wiener, m)
    assert report.response_sup <= 1e-12
    assert report.expected_w_norm == pytest.approx(0.45 * math.sqrt(math.pi), rel=1e-5)
    assert abs(report.w_norm - report.expected_w_norm) <= 5.0 * report.expected_w_norm / math.sqrt(wiener.N)


@pytest.fixture(scope="module")
def fermi_kernel():
    """h for the 2d Fermi gas at T = 1, mu = 0."""
    return build_kernel_h(MomentumDistribution(kind="fermi", dim=2, T=1.0, mu=0.0))


def test_epsilon_matches_dense_grid_maximum(gaussian_kernel):
    """The reported eps_h agrees with a 200 x 200 maximum of Re m_f on the finest box."""
    report = epsilon_h(gaussian_kernel)
    size = 2.0**-8
    omega = np.linspace(0.0, size, 200)
    xi = np.linspace(size / 200, size, 200)
    dense = float(np.max(compute_mf(gaussian_kernel, omega, xi, tol=1e-4).values.real))
    assert abs(report.value - dense) <= 1e-3
    assert report.stabilized
    assert report.warnings == []


def test_unstabilized_epsilon_is_reported(gaussian_kernel, caplog):
    """A trend moving more than tol is flagged in the report and the log, or raises when strict."""
    with caplog.at_level(logging.WARNING, logger="hartree_rf"):
        report = epsilon_h(gaussian_kernel, levels=1, points=8, tol=0.0)
    assert not report.stabilized
    assert len(report.warnings) == 1
    assert "not stabilized" in report.warnings[0]
    assert any(record.levelno == logging.WARNING for record in caplog.records)
    with pytest.raises(NotStabilized):
        epsilon_h(gaussian_kernel, levels=1, points=8, tol=0.0, strict=True)


def test_attractive_contact_keeps_a_positive_margin(fermi_kernel, unit_grid):
    """w = -c delta with c int r|h| = 1.9 leaves min |1 - w_hat m_f| above 1 - c I1 / 2."""
    c = 1.9 / fermi_kernel.I1
    w = PairPotential(dim=2, atom_weight=-c)
    times = np.linspace(0.0, 1.0, 17)
    symbol = response_symbol_for(unit_grid, times, fermi_kernel)
    V = cosine_potential(unit_grid, times, lambda t: np.sin(2.0 * t))
    _, report = invert_id_minus_L2(V, w, symbol)

    columns = [
        compute_mf(fermi_kernel, symbol.omega, np.array([x])).values[:, 0] for x in symbol.xi
    ]
    brute = min(float(np.min(np.abs(1.0 + c * column))) for column in columns)
    assert report.margin == pytest.approx(brute, rel=1e-12)
    assert report.margin >= 1.0 - 0.5 * c * fermi_kernel.I1 - 1e-6
    assert report.margin > 0.0


def test_L2_is_the_linear_density_response(gaussian_f, grid, gaussian_kernel, contact_w, m):
    """L2 V = 2 Re E(conj(Y) W_{w*V}(Y)) within Monte-Carlo error."""
    wiener = WienerSample(seed=31, N=2048, shape=grid.shape)
    times = np.linspace(0.0, 2.0, 65)
    spatial = np.cos(2 * math.pi * grid.x_vectors[0] / grid.L)
    bump = np.exp(-((times - 1.0) ** 2) / 0.08)
    V = SpaceTimePotential(grid, times, bump[:, None, None] * spatial)
    symbol = response_symbol_for(grid, times, gaussian_kernel)
    L2V = apply_L2(V, contact_w, symbol).values

    y_target, y_product = itertools.tee(equilibrium_stream(gaussian_f, grid, wiener, times, m))
    frames = [
        ensemble_estimate(2.0 * real_inner(Y, W))
        for Y, W in zip(y_product, duhamel_stream(V.convolve(contact_w), y_target, m))
    ]
    estimate = np.stack([mean for mean, _ in frames])
    error = np.stack([err for _, err in frames])
    norm = lambda values: float(np.sqrt(np.sum(values**2)))
    assert norm(L2V) >= 3.0 * norm(error)
    assert norm(estimate - L2V) <= 5.0 * norm(error) + 1e-2 * norm(L2V)

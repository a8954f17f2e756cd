import math

import numpy as np
import pytest
from scipy.integrate import quad

from hartree_rf.core.profiles import (
    MomentumDistribution,
    PairPotential,
    build_kernel_h,
    check_hypotheses,
    eval_w_hat,
    kernel_integrals,
    sphere_area,
)
from hartree_rf.errors import NonIntegrable


def test_sphere_area():
    """Unit sphere measures in two and three dimensions."""
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_profile_validation():
    """Unknown kinds and Bose profiles at the condensation point are refused."""
    with pytest.raises(ValueError):
        MomentumDistribution(kind="maxwell", dim=2)
    with pytest.raises(ValueError):
        MomentumDistribution(kind="bose", dim=2, mu=0.0)


def test_fermi_derivative_matches_finite_difference():
    """df is the radial derivative of f."""
    f = MomentumDistribution(kind="fermi", dim=3, T=0.7, mu=0.5)
    r = np.linspace(0.2, 3.0, 15)
    step = 1e-6
    numeric = (f.f(r + step) - f.f(r - step)) / (2 * step)
    np.testing.assert_allclose(f.df(r), numeric, rtol=1e-6, atol=1e-9)


def test_gaussian_mass():
    """Integral of exp(-|xi|^2 / T) over R^3."""
    f = MomentumDistribution(kind="gaussian", dim=3, T=2.0)
    assert f.mass() == pytest.approx((2.0 * math.pi) ** 1.5, rel=1e-8)


def test_kernel_of_gaussian_profile(gaussian_kernel):
    """h(r) = pi exp(-r^2 / 4) for the 2d Gaussian."""
    assert gaussian_kernel.h0 == pytest.approx(math.pi, rel=1e-8)
    r = np.array([0.5, 1.0, 2.0, 4.0])
    np.testing.assert_allclose(gaussian_kernel.h_at(r), math.pi * np.exp(-(r**2) / 4), atol=1e-7)
    assert gaussian_kernel.I0 == pytest.approx(math.pi**1.5, rel=1e-6)


def test_kernel_of_gaussian_profile_in_3d():
    """h(r) = pi^(3/2) exp(-r^2 / 4) in three dimensions."""
    kernel = build_kernel_h(MomentumDistribution(kind="gaussian", dim=3, T=1.0))
    r = np.array([0.0, 1.0, 3.0])
    np.testing.assert_allclose(kernel.h_at(r), math.pi**1.5 * np.exp(-(r**2) / 4), atol=1e-7)


def test_kernel_refuses_heavy_tail():
    """A Bessel tail decaying slower than r^-dim is not integrable."""
    f = MomentumDistribution(kind="bessel", dim=3, alpha=2.5, r_cap=50.0)
    with pytest.raises(NonIntegrable):
        build_kernel_h(f)


def test_contact_potential_transform():
    """A pure delta has a flat transform."""
    w = PairPotential(dim=3, atom_weight=0.7)
    np.testing.assert_allclose(w.w_hat(np.array([0.0, 1.0, 10.0])), 0.7)


def test_gaussian_density_transform():
    """Gaussian density a exp(-r^2/s^2) transforms to a (pi s^2)^(d/2) exp(-s^2 xi^2 / 4)."""
    w = PairPotential(dim=2, atom_weight=0.0, density_kind="gaussian", amplitude=0.3, width=1.5)
    xi = np.array([0.0, 0.5, 2.0])
    expected = 0.3 * math.pi * 1.5**2 * np.exp(-(1.5**2) * xi**2 / 4)
    np.testing.assert_allclose(w.w_hat(xi), expected, rtol=1e-7, atol=1e-10)


def test_hypotheses_report_attractive_zero_mode(gaussian_kernel, gaussian_f):
    """Too strong a repulsion at zero frequency fails the eps_h condition."""
    strong = PairPotential(dim=2, atom_weight=1e6)
    report = check_hypotheses(gaussian_f, strong, eps_h=1.0, kernel=gaussian_kernel)
    assert not report.passed
    assert not report.entries["interaction_zero"].passed
    assert report.entries["positivity"].passed
    assert report.entries["strictly_decreasing"].passed


def test_hypotheses_pass_for_weak_contact(gaussian_kernel, gaussian_f, contact_w):
    """Gaussian profile with a weak delta interaction satisfies every required check."""
    report = check_hypotheses(gaussian_f, contact_w, eps_h=0.1, kernel=gaussian_kernel)
    assert report.entries["interaction_negative"].passed
    assert report.entries["interaction_zero"].passed
    assert report.w_hat_zero == pytest.approx(0.5)
    assert report.passed


def test_w_hat_at_wavevectors():
    """eval_w_hat reads the radial transform at |xi| along the last axis."""
    w = PairPotential(dim=2, atom_weight=0.0, density_kind="gaussian", amplitude=0.3, width=1.5)
    vectors = np.array([[3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(eval_w_hat(w, vectors), w.w_hat(np.array([5.0, 0.0])))


def test_kernel_integral_of_gaussian_h(gaussian_kernel):
    """C_2(h) = int_{R^2} |h|^2 = 2 pi^3 for h(r) = pi exp(-r^2/4)."""
    assert kernel_integrals(gaussian_kernel, 2) == pytest.approx(2 * math.pi**3, rel=1e-4)
    assert kernel_integrals(gaussian_kernel, 1) > 0.0
    with pytest.raises(ValueError):
        kernel_integrals(gaussian_kernel, 3)


@pytest.fixture(scope="module")
def fermi3d():
    """Fermi gas at T = 1, mu = 0 in three dimensions."""
    return MomentumDistribution(kind="fermi", dim=3, T=1.0, mu=0.0)


@pytest.fixture(scope="module")
def fermi3d_kernel(fermi3d):
    return build_kernel_h(fermi3d)


def test_fermi_kernel_matches_oscillatory_quadrature(fermi3d, fermi3d_kernel):
    """h(r) = (4 pi / r) int rho sin(r rho) f^2 drho at tabulation nodes, to 1e-6 of h(0)."""
    f2 = lambda rho: float(fermi3d.f2(np.array([rho]))[0])
    h0 = 4 * math.pi * quad(lambda rho: rho**2 * f2(rho), 0.0, 12.0, epsabs=1e-13, limit=200)[0]
    assert fermi3d_kernel.h0 == pytest.approx(h0, rel=1e-6)
    for target in (0.5, 1.0, 2.0, 4.0, 8.0):
        idx = int(np.argmin(np.abs(fermi3d_kernel.r - target)))
        r = float(fermi3d_kernel.r[idx])
        integral = quad(
            lambda rho: rho * f2(rho), 0.0, 12.0, weight="sin", wvar=r, epsabs=1e-13, limit=200
        )[0]
        assert abs(fermi3d_kernel.h[idx] - 4 * math.pi * integral / r) <= 1e-6 * h0


def test_kernel_is_linear_in_f_squared(fermi3d, fermi3d_kernel, gaussian_kernel):
    """f^2 -> 3 f^2 scales h, I0 and I1 by 3 and C_1, C_2 by 9."""
    tripled = build_kernel_h(MomentumDistribution(kind="fermi", dim=3, T=1.0, mu=0.0, scale=3.0))
    np.testing.assert_allclose(
        tripled.h, 3.0 * fermi3d_kernel.h, rtol=1e-12, atol=1e-14 * tripled.h0
    )
    assert tripled.I0 == pytest.approx(3.0 * fermi3d_kernel.I0, rel=1e-12)
    assert tripled.I1 == pytest.approx(3.0 * fermi3d_kernel.I1, rel=1e-12)
    scaled = gaussian_kernel.scaled(3.0)
    assert scaled.C1 == pytest.approx(9.0 * gaussian_kernel.C1, rel=1e-10)
    assert scaled.C2 == pytest.approx(9.0 * gaussian_kernel.C2, rel=1e-10)


def test_fermi_profile_meets_the_profile_conditions(fermi3d, fermi3d_kernel):
    """Positivity, regularity, monotonicity and both moments hold for the Fermi gas."""
    weak = PairPotential(dim=3, atom_weight=0.1)
    report = check_hypotheses(fermi3d, weak, eps_h=0.1, kernel=fermi3d_kernel)
    names = ("positivity", "c1", "strictly_decreasing", "moment_xi", "moment_grad", "h_integrable")
    for name in names:
        assert report.entries[name].passed, name


def test_step_profile_fails_positivity_and_regularity(gaussian_kernel, contact_w):
    """A tabulated step vanishes past its edge and jumps across it."""
    step = MomentumDistribution(
        kind="tabulated",
        dim=2,
        table_r=np.array([0.0, 1.0, 1.001, 3.0]),
        table_f2=np.array([1.0, 1.0, 0.0, 0.0]),
    )
    report = check_hypotheses(step, contact_w, eps_h=0.1, kernel=gaussian_kernel)
    assert not report.passed
    assert not report.entries["positivity"].passed
    assert not report.entries["c1"].passed

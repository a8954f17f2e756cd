"""Linear-response symbol m_f, the constant eps_h and the operator L2 with its inverse."""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft
from pydantic import BaseModel
from scipy.integrate import simpson, trapezoid
from scipy.linalg import solve_toeplitz

from ..errors import GridMismatch, NotStabilized, QuadratureFailure, ResonantSymbol
from ..errors import ValidationFailure
from .field_core import (
    EnsembleField,
    FieldHistory,
    Grid,
    SpaceTimePotential,
    WienerSample,
    as_real,
    duhamel_stream,
    ensemble_mean,
    equilibrium_mass,
    equilibrium_stream,
    free_stream,
    real_inner,
)
from .profiles import MomentumDistribution, PairKernel, PairPotential

logger = logging.getLogger(__name__)

PADDING = 4
SMALL_THETA = 0.1


@dataclass(eq=False)
class ResponseSymbol:
    """m_f[omega][xi] with per-node error estimates.

    Symbols built by ``response_symbol_for`` also carry the time step, the number of
    time nodes and the map from lattice modes to xi columns.
    """

    omega: np.ndarray
    xi: np.ndarray
    values: np.ndarray
    error: np.ndarray
    dt: Optional[float] = None
    nodes: Optional[int] = None
    radius_index: Optional[np.ndarray] = None
    grid_key: Optional[Tuple[int, int, float]] = None

    @property
    def padded_length(self) -> int:
        return int(self.omega.size)

    def to_rows(self) -> List[Tuple[float, float, float, float, float]]:
        rows = []
        for i, w in enumerate(self.omega):
            for j, x in enumerate(self.xi):
                m = self.values[i, j]
                rows.append((float(w), float(x), float(m.real), float(m.imag), float(self.error[i, j])))
        return rows


class MarginReport(BaseModel):
    margin: float
    omega_at: float
    xi_at: float
    c_min: float
    passed: bool


class EpsilonReport(BaseModel):
    value: float
    trend: List[float]
    stabilized: bool
    omega_at: float
    xi_at: float
    ray_value: float
    ray_kappa: float
    warnings: List[str] = []


class LinearCancellationReport(BaseModel):
    response_sup: float
    w_norm: float
    expected_w_norm: float
    mc_scale: float


def _filon_weights(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < SMALL_THETA
    t = np.where(small, 1.0, theta)
    sin, cos = np.sin(t), np.cos(t)
    t3 = t**3
    alpha = (t**2 + t * sin * cos - 2.0 * sin**2) / t3
    beta = 2.0 * (t * (1.0 + cos**2) - 2.0 * sin * cos) / t3
    gamma = 4.0 * (sin - t * cos) / t3

    th2 = theta**2
    alpha_s = theta * th2 * (2.0 / 45.0 - th2 * (2.0 / 315.0) + th2**2 * (2.0 / 4725.0))
    beta_s = 2.0 / 3.0 + th2 * (2.0 / 15.0) - th2**2 * (4.0 / 105.0) + th2**3 * (2.0 / 567.0)
    gamma_s = 4.0 / 3.0 - th2 * (2.0 / 15.0) + th2**2 / 210.0 - th2**3 / 11340.0
    return (
        np.where(small, alpha_s, alpha),
        np.where(small, beta_s, beta),
        np.where(small, gamma_s, gamma),
    )


def filon_fourier(values: np.ndarray, ds: float, k: np.ndarray, chunk: int = 4_000_000) -> np.ndarray:
    """int_0^S values(s) e^{iks} ds on a uniform grid with an odd number of samples.

    Falls back to Simpson's rule for the frequencies with |k| S < 1.
    """
    if values.size % 2 == 0:
        raise ValueError("Filon rule needs an odd number of samples")
    k = np.atleast_1d(np.asarray(k, dtype=float))
    s = ds * np.arange(values.size)
    S = float(s[-1])
    out = np.empty(k.shape, dtype=np.complex128)
    flat_k, flat_out = k.ravel(), out.ravel()
    rows = max(1, chunk // values.size)
    for start in range(0, flat_k.size, rows):
        kk = flat_k[start : start + rows]
        phase = np.exp(1j * kk[:, None] * s[None, :])
        weighted = phase * values[None, :]
        plain = np.abs(kk) * S < 1.0
        result = np.empty(kk.shape, dtype=np.complex128)
        if np.any(plain):
            result[plain] = simpson(weighted[plain], dx=ds, axis=1)
        if np.any(~plain):
            w = weighted[~plain]
            alpha, beta, gamma = _filon_weights(kk[~plain] * ds)
            even = w[:, 0::2].sum(axis=1) - 0.5 * (w[:, 0] + w[:, -1])
            odd = w[:, 1::2].sum(axis=1)
            ends = w[:, -1] - w[:, 0]
            result[~plain] = ds * (-1j * alpha * ends + beta * even + gamma * odd)
        flat_out[start : start + rows] = result
    return out


def _kernel_samples(h: PairKernel, ds: float) -> Tuple[np.ndarray, float]:
    """h on a uniform grid of 4m + 1 nodes covering its numerical support."""
    absolute = np.abs(h.h)
    peak = float(absolute.max())
    if peak == 0.0:
        return np.zeros(5), ds
    significant = np.nonzero(absolute > 1e-14 * peak)[0]
    extent = float(h.r[min(significant[-1] + 1, h.r.size - 1)])
    m = max(int(math.ceil(extent / (4.0 * ds))), 4)
    s = np.linspace(0.0, 4.0 * m * ds, 4 * m + 1)
    return h.h_at(s), float(s[1] - s[0])


def _mf_column(samples: np.ndarray, ds: float, omega: np.ndarray, xi: float) -> np.ndarray:
    k1 = xi / 2.0 - omega / (2.0 * xi)
    k2 = xi / 2.0 + omega / (2.0 * xi)
    F = filon_fourier(samples, ds, np.concatenate((k1, -k2)))
    F1, F2 = F[: omega.size], F[omega.size :]
    return -(F1 - F2) / (2j * xi)


def compute_mf(
    h: PairKernel, omega: np.ndarray, xi: np.ndarray, tol: float = 1e-6, ds: float = 0.01
) -> ResponseSymbol:
    """m_f(omega, xi) = -(1/|xi|) int_0^inf e^{-i omega s/(2|xi|)} sin(|xi| s/2) h(s) ds."""
    omega = np.asarray(omega, dtype=float)
    xi = np.asarray(xi, dtype=float)
    values = np.zeros((omega.size, xi.size), dtype=np.complex128)
    error = np.zeros((omega.size, xi.size))

    fine, step = _kernel_samples(h, ds)
    coarse = fine[::2]
    magnitudes, inverse = np.unique(np.abs(omega), return_inverse=True)
    conjugate = omega < 0

    for j, x in enumerate(xi):
        if x == 0.0:
            continue
        m_fine = _mf_column(fine, step, magnitudes, abs(x))
        m_coarse = _mf_column(coarse, 2.0 * step, magnitudes, abs(x))
        err = np.abs(m_fine - m_coarse) / 15.0
        bound = h.I0 / abs(x)
        if float(err.max()) > tol * max(bound, 1e-300):
            raise QuadratureFailure(
                f"m_f quadrature error {float(err.max()):.3e} at |xi|={x:.4g} above {tol:.1e} x {bound:.3e}"
            )
        column = m_fine[inverse]
        values[:, j] = np.where(conjugate, np.conj(column), column)
        error[:, j] = err[inverse]

    return ResponseSymbol(omega=omega, xi=xi, values=values, error=error)


def ray_limit(h: PairKernel, kappa: np.ndarray, ds: float = 0.01) -> np.ndarray:
    """Limit of Re m_f along omega = kappa |xi|: -1/2 int cos(kappa s / 2) s h(s) ds."""
    samples, step = _kernel_samples(h, ds)
    s = step * np.arange(samples.size)
    return -0.5 * filon_fourier(s * samples, step, np.asarray(kappa, dtype=float) / 2.0).real


def epsilon_h(
    h: PairKernel,
    levels: int = 8,
    points: int = 64,
    tol: float = 1e-3,
    strict: bool = False,
) -> EpsilonReport:
    """Max of Re m_f over the boxes [0, 2^-j] x (0, 2^-j], j = 0..levels."""
    trend: List[float] = []
    omega_at = xi_at = 0.0
    for j in range(levels + 1):
        size = 2.0**-j
        omega = np.linspace(0.0, size, points)
        xi = np.linspace(size / points, size, points)
        symbol = compute_mf(h, omega, xi, tol=1e-4)
        re = symbol.values.real
        idx = np.unravel_index(int(np.argmax(re)), re.shape)
        trend.append(float(re[idx]))
        omega_at, xi_at = float(omega[idx[0]]), float(xi[idx[1]])

    stabilized = len(trend) < 2 or abs(trend[-1] - trend[-2]) < tol
    kappa = np.linspace(0.0, 64.0, 2049)
    ray = ray_limit(h, kappa)
    best = int(np.argmax(ray))
    ray_value = max(float(ray[best]), 0.0)

    warnings: List[str] = []
    if not stabilized:
        message = f"eps_h not stabilized: last levels {trend[-2]:.6e} -> {trend[-1]:.6e}"
        if strict:
            raise NotStabilized(message)
        logger.warning(f"⚠️ {message}")
        warnings.append(message)
    logger.info(f"✅ eps_h = {trend[-1]:.6e} (ray limit {ray_value:.6e})")
    return EpsilonReport(
        value=trend[-1],
        trend=trend,
        stabilized=stabilized,
        omega_at=omega_at,
        xi_at=xi_at,
        ray_value=ray_value,
        ray_kappa=float(kappa[best]),
        warnings=warnings,
    )


def padded_length(nodes: int) -> int:
    return PADDING * nodes + 1


def response_symbol_for(
    grid: Grid, times: np.ndarray, h: PairKernel, tol: float = 1e-6
) -> ResponseSymbol:
    """m_f on the padded time-frequency grid and the distinct lattice radii of ``grid``."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise GridMismatch("Need at least two time nodes")
    dt = float(times[1] - times[0])
    P = padded_length(times.size)
    omega = 2.0 * math.pi * np.fft.fftfreq(P, d=dt)
    radii, inverse = np.unique(np.round(grid.xi_abs, 12), return_inverse=True)
    symbol = compute_mf(h, omega, radii, tol=tol)
    symbol.dt = dt
    symbol.nodes = times.size
    symbol.radius_index = inverse.reshape(grid.shape)
    symbol.grid_key = (grid.dim, grid.n, grid.L)
    logger.info(f"✅ Response symbol tabulated: {P} frequencies x {radii.size} radii")
    return symbol


def _check_symbol(V: SpaceTimePotential, symbol: ResponseSymbol) -> None:
    if symbol.radius_index is None or symbol.dt is None:
        raise GridMismatch("Symbol was not tabulated for a lattice (use response_symbol_for)")
    if symbol.grid_key != (V.grid.dim, V.grid.n, V.grid.L):
        raise GridMismatch(f"Symbol grid {symbol.grid_key} does not match the potential grid")
    if symbol.nodes != V.times.size or abs(symbol.dt - V.dt) > 1e-12 * abs(V.dt):
        raise GridMismatch("Symbol time grid does not match the potential time nodes")


def _mode_multiplier(w: PairPotential, symbol: ResponseSymbol) -> np.ndarray:
    """w_hat(xi) m_f(omega, xi) per padded frequency and xi column."""
    return symbol.values * w.w_hat(symbol.xi)[None, :]


def _discrete_kernels(w: PairPotential, symbol: ResponseSymbol) -> np.ndarray:
    """Causal kernels k[lag][column] of the padded multiplier (real by conjugate symmetry)."""
    return scipy.fft.ifft(_mode_multiplier(w, symbol), axis=0).real


def apply_L2(V: SpaceTimePotential, w: PairPotential, symbol: ResponseSymbol) -> SpaceTimePotential:
    """Space-time multiplier w_hat(xi) m_f(omega, xi) with zero padding in time."""
    _check_symbol(V, symbol)
    grid = V.grid
    nodes, P = V.times.size, symbol.padded_length
    coeffs = grid.to_fourier(V.values)
    spectrum = scipy.fft.fft(coeffs, n=P, axis=0, workers=grid.workers)
    multiplier = _mode_multiplier(w, symbol)[:, symbol.radius_index]
    out = scipy.fft.ifft(spectrum * multiplier, axis=0, workers=grid.workers)[:nodes]
    return SpaceTimePotential(grid, V.times, as_real(grid.from_fourier(out), "L2 V"))


def margin_report(w: PairPotential, symbol: ResponseSymbol, c_min: float) -> MarginReport:
    distance = np.abs(1.0 - _mode_multiplier(w, symbol))
    i, j = np.unravel_index(int(np.argmin(distance)), distance.shape)
    margin = float(distance[i, j])
    return MarginReport(
        margin=margin,
        omega_at=float(symbol.omega[i]),
        xi_at=float(symbol.xi[j]),
        c_min=c_min,
        passed=margin >= c_min,
    )


def invert_id_minus_L2(
    V: SpaceTimePotential, w: PairPotential, symbol: ResponseSymbol, c_min: float = 1e-3
) -> Tuple[SpaceTimePotential, MarginReport]:
    """(Id - L2)^{-1} V on the finite horizon, one Toeplitz solve per lattice radius."""
    _check_symbol(V, symbol)
    report = margin_report(w, symbol, c_min)
    if not report.passed:
        raise ResonantSymbol(
            f"min |1 - w_hat m_f| = {report.margin:.3e} below c_min={c_min:.1e} "
            f"at omega={report.omega_at:.4g}, |xi|={report.xi_at:.4g}"
        )

    grid = V.grid
    nodes, P = V.times.size, symbol.padded_length
    kernels = _discrete_kernels(w, symbol)
    coeffs = grid.to_fourier(V.values).reshape(nodes, -1)
    columns = symbol.radius_index.ravel()
    solution = np.empty_like(coeffs)
    delta = np.zeros(nodes)
    delta[0] = 1.0
    lags = (P - np.arange(nodes)) % P

    for j in range(symbol.xi.size):
        modes = np.nonzero(columns == j)[0]
        if modes.size == 0:
            continue
        k = kernels[:, j]
        first_col = delta - k[:nodes]
        first_row = delta - k[lags]
        rhs = coeffs[:, modes]
        stacked = np.concatenate((rhs.real, rhs.imag), axis=1)
        solved = solve_toeplitz((first_col, first_row), stacked)
        solution[:, modes] = solved[:, : modes.size] + 1j * solved[:, modes.size :]

    values = grid.from_fourier(solution.reshape((nodes,) + grid.shape))
    logger.debug(f"📋 (Id - L2) inverted with margin {report.margin:.4e}")
    return SpaceTimePotential(grid, V.times, as_real(values, "(Id-L2)^-1 V")), report


def linear_cancellation_diag(
    V: SpaceTimePotential,
    f: MomentumDistribution,
    grid: Grid,
    wiener: WienerSample,
    m: float,
) -> LinearCancellationReport:
    """Show that 2 Re E(conj(Y) W_V(Y)) vanishes while W_V(Y) grows with int V."""
    spread = np.max(np.abs(V.values - V.values.mean(axis=tuple(range(1, V.values.ndim)), keepdims=True)))
    if spread > 1e-12 * max(float(np.max(np.abs(V.values))), 1e-300):
        raise ValidationFailure("linear_cancellation_diag needs a spatially constant potential")

    y_for_target, y_for_product = itertools.tee(equilibrium_stream(f, grid, wiener, V.times, m))
    response_sup = 0.0
    last_w: Optional[np.ndarray] = None
    for Y, W in zip(y_for_product, duhamel_stream(V, y_for_target, m)):
        response = 2.0 * ensemble_mean(real_inner(Y, W))
        response_sup = max(response_sup, float(np.max(np.abs(response))))
        last_w = W

    mass = equilibrium_mass(f, grid)
    w_norm = math.sqrt(float(np.mean(ensemble_mean(np.abs(last_w) ** 2))))
    integral = float(trapezoid(V.values.reshape(V.times.size, -1)[:, 0], V.times))
    report = LinearCancellationReport(
        response_sup=response_sup,
        w_norm=w_norm,
        expected_w_norm=abs(integral) * math.sqrt(mass),
        mc_scale=5.0 / math.sqrt(wiener.N) * mass * max(abs(integral), 1e-300),
    )
    logger.info(
        f"✅ Linear cancellation: sup|2Re E(Y W)|={response_sup:.3e}, "
        f"||W(T)||={w_norm:.4e} (expected {report.expected_w_norm:.4e})"
    )
    return report


@dataclass(eq=False)
class LinearResponseSolution:
    V: SpaceTimePotential
    V_prime: SpaceTimePotential
    Z: FieldHistory
    margin: MarginReport


def free_source(
    Z0: EnsembleField, f: MomentumDistribution, wiener: WienerSample, times: np.ndarray, m: float
) -> SpaceTimePotential:
    """2 Re E(conj(Y) S(t) Z0) at every time node."""
    grid = Z0.grid
    frames = [
        2.0 * ensemble_mean(real_inner(Y, Z))
        for Y, Z in zip(equilibrium_stream(f, grid, wiener, times, m), free_stream(Z0, times, m))
    ]
    scale = 5.0 / math.sqrt(wiener.N) * math.sqrt(equilibrium_mass(f, grid))
    source = SpaceTimePotential(grid, times, np.stack(frames))
    source.scale = scale * np.sqrt(np.mean(np.abs(Z0.values) ** 2, axis=0))[None]
    return source


def solve_linear_response(
    Z0: EnsembleField,
    f: MomentumDistribution,
    w: PairPotential,
    wiener: WienerSample,
    times: np.ndarray,
    m: float,
    symbol: ResponseSymbol,
    c_min: float = 1e-3,
    history_dtype: str = "complex128",
) -> LinearResponseSolution:
    """V = (Id - L2)^{-1} 2 Re E(conj(Y) S(t) Z0) and Z = S(t) Z0 + W_{w*V}(Y)."""
    grid = Z0.grid
    times = np.asarray(times, dtype=float)
    source = free_source(Z0, f, wiener, times, m)
    V, margin = invert_id_minus_L2(source, w, symbol, c_min)
    V_prime = V.convolve(w)
    stream = (
        free + response
        for free, response in zip(
            free_stream(Z0, times, m),
            duhamel_stream(V_prime, equilibrium_stream(f, grid, wiener, times, m), m),
        )
    )
    Z = FieldHistory.from_stream(grid, times, stream, dtype=history_dtype)
    logger.info(f"✅ Linear response solved over {times.size} nodes (margin {margin.margin:.3e})")
    return LinearResponseSolution(V=V, V_prime=V_prime, Z=Z, margin=margin)


def kernel_time_domain(
    h: PairKernel, xi: float, s: np.ndarray
) -> np.ndarray:
    """Causal kernel -2 sin(|xi|^2 s) h(2|xi| s) for s >= 0."""
    s = np.asarray(s, dtype=float)
    return np.where(s >= 0.0, -2.0 * np.sin(xi**2 * s) * h.h_at(2.0 * abs(xi) * s), 0.0)

"""Periodic grids, Wiener coefficients, ensembles, propagators and the Duhamel operator."""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft

from ..errors import GridMismatch, NaNDetected, NumericalError, NyquistUnderresolved
from ..errors import OffLatticeFrequency
from .profiles import MomentumDistribution, PairPotential

logger = logging.getLogger(__name__)

COUNTER_CONTRACT = "philox4x64-boxmuller/1"
REAL_RESIDUE_TOL = 1e-10

FieldStream = Iterator[np.ndarray]


@dataclass(frozen=True, eq=False)
class Grid:
    """Periodic box [0, L)^dim with n points per axis and its frequency lattice."""

    dim: int
    n: int
    L: float
    workers: int = 1

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"Unsupported dimension {self.dim}")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two, got {self.n}")
        if self.L <= 0:
            raise ValueError("Box length must be positive")

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axes(self) -> Tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def cell(self) -> float:
        return self.dx**self.dim

    @property
    def dxi(self) -> float:
        return (2.0 * math.pi / self.L) ** self.dim

    @property
    def volume(self) -> float:
        return self.L**self.dim

    @property
    def nyquist_radius(self) -> float:
        return math.pi * self.n / self.L

    @cached_property
    def k_axis(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def xi_axis(self) -> np.ndarray:
        return 2.0 * math.pi * self.k_axis / self.L

    @cached_property
    def xi_vectors(self) -> np.ndarray:
        return np.stack(np.meshgrid(*([self.xi_axis] * self.dim), indexing="ij"))

    @cached_property
    def xi2(self) -> np.ndarray:
        return np.sum(self.xi_vectors**2, axis=0)

    @cached_property
    def xi_abs(self) -> np.ndarray:
        return np.sqrt(self.xi2)

    @cached_property
    def x_vectors(self) -> np.ndarray:
        x = np.arange(self.n) * self.dx
        return np.stack(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def edge_mask(self) -> np.ndarray:
        """Modes on the Nyquist rows (some |k_i| = n/2)."""
        k = np.stack(np.meshgrid(*([self.k_axis] * self.dim), indexing="ij"))
        return np.any(np.abs(k) == self.n // 2, axis=0)

    def to_fourier(self, values: np.ndarray) -> np.ndarray:
        """Coefficients c_k with u(x) = sum_k c_k e^{i xi_k x}."""
        return scipy.fft.fftn(values, axes=self.axes, norm="forward", workers=self.workers)

    def from_fourier(self, coeffs: np.ndarray) -> np.ndarray:
        return scipy.fft.ifftn(coeffs, axes=self.axes, norm="forward", workers=self.workers)

    def apply_multiplier(self, values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
        return self.from_fourier(self.to_fourier(values) * multiplier)

    def lattice_index(self, xi: Sequence[float], tol: float = 1e-9) -> np.ndarray:
        """Integer lattice vector k with xi = 2 pi k / L, or OffLatticeFrequency."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dim,):
            raise OffLatticeFrequency(f"Wavevector {xi.tolist()} has wrong dimension")
        k = xi * self.L / (2.0 * math.pi)
        rounded = np.round(k)
        if np.max(np.abs(k - rounded)) > tol or np.any(np.abs(rounded) >= self.n // 2):
            raise OffLatticeFrequency(f"Wavevector {xi.tolist()} is not on the lattice")
        return rounded.astype(int)

    def plane_wave(self, xi: Sequence[float]) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        phase = np.tensordot(xi, self.x_vectors, axes=(0, 0))
        return np.exp(1j * phase)

    def same_as(self, other: "Grid") -> bool:
        return self.dim == other.dim and self.n == other.n and self.L == other.L


def gaussian_bump(grid: Grid, width: float, center: Optional[Sequence[float]] = None) -> np.ndarray:
    """exp(-|x - c|^2 / width^2) with minimum-image distances."""
    c = np.full(grid.dim, grid.L / 2.0) if center is None else np.asarray(center, dtype=float)
    shape = (grid.dim,) + (1,) * grid.dim
    d = grid.x_vectors - c.reshape(shape)
    d = (d + grid.L / 2.0) % grid.L - grid.L / 2.0
    return np.exp(-np.sum(d**2, axis=0) / width**2)


def ensemble_mean(values: np.ndarray) -> np.ndarray:
    """Mean over axis 0 by a pairwise tree whose shape depends only on the length."""
    acc = values
    count = values.shape[0]
    while acc.shape[0] > 1:
        half = acc.shape[0] // 2
        paired = acc[:half] + acc[half : 2 * half]
        acc = np.concatenate((paired, acc[2 * half :])) if acc.shape[0] % 2 else paired
    return acc[0] / count


def real_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Re(conj(a) b), symmetric in a and b bit for bit."""
    return a.real * b.real + a.imag * b.imag


def ensure_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NaNDetected(f"Non-finite values in {what}")


def as_real(values: np.ndarray, what: str) -> np.ndarray:
    """Drop a roundoff imaginary part; larger residues are an error."""
    if not np.iscomplexobj(values):
        return np.asarray(values, dtype=float)
    peak = float(np.max(np.abs(values.real))) if values.size else 0.0
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue > REAL_RESIDUE_TOL * max(peak, 1e-300) and residue > 1e-300:
        raise NumericalError(f"{what}: imaginary residue {residue:.3e} vs amplitude {peak:.3e}")
    return np.ascontiguousarray(values.real)


@dataclass(frozen=True, eq=False)
class WienerSample:
    """Complex standard Gaussians g[realization][mode] under the counter contract."""

    seed: int
    N: int
    shape: Tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.N < 1:
            raise ValueError("N must be positive")

    @property
    def n_modes(self) -> int:
        return int(np.prod(self.shape))

    def modes(self, realization: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        """Coefficients of modes [start, stop) (flattened fft order) for one realization."""
        stop = self.n_modes if stop is None else stop
        if not 0 <= start <= stop <= self.n_modes:
            raise ValueError(f"Mode range [{start}, {stop}) outside [0, {self.n_modes})")
        if not 0 <= realization < self.N:
            raise ValueError(f"Realization {realization} outside [0, {self.N})")
        block = start // 2
        counter = np.array([block, 0, realization, 0], dtype=np.uint64)
        bitgen = np.random.Philox(key=self.seed, counter=counter)
        count = stop - 2 * block
        raw = bitgen.random_raw(2 * count)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        g = np.sqrt(-np.log(u[0::2])) * np.exp(2j * math.pi * u[1::2])
        return g[start - 2 * block :]

    def coefficients(self, realizations: Optional[Sequence[int]] = None) -> np.ndarray:
        rows = range(self.N) if realizations is None else realizations
        out = np.empty((len(rows),) + self.shape, dtype=np.complex128)
        for i, r in enumerate(rows):
            out[i] = self.modes(r).reshape(self.shape)
        return out

    @cached_property
    def all_coefficients(self) -> np.ndarray:
        return self.coefficients()


@dataclass(eq=False)
class EnsembleField:
    """N realizations of a complex field on the grid at time t."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0
    provenance: Optional[WienerSample] = None

    def __post_init__(self) -> None:
        if self.values.shape[1:] != self.grid.shape:
            raise GridMismatch(f"Field shape {self.values.shape[1:]} != grid {self.grid.shape}")
        ensure_finite(self.values, "ensemble field")

    @property
    def N(self) -> int:
        return int(self.values.shape[0])

    def with_values(self, values: np.ndarray, t: Optional[float] = None) -> "EnsembleField":
        return EnsembleField(self.grid, values, self.t if t is None else t, self.provenance)

    def density(self) -> np.ndarray:
        """Ensemble mean of |X|^2 on the grid."""
        return ensemble_mean(np.abs(self.values) ** 2)

    def l2_per_realization(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=axes) * self.grid.cell)


@dataclass(eq=False)
class FieldHistory:
    """Materialized field values at every time node: values[time][realization][...]."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape[0] != self.times.size:
            raise GridMismatch("History length does not match the time nodes")

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.values)

    def at(self, j: int) -> EnsembleField:
        return EnsembleField(self.grid, self.values[j], float(self.times[j]))

    @classmethod
    def from_stream(
        cls, grid: Grid, times: np.ndarray, stream: Iterable[np.ndarray], dtype: str = "complex128"
    ) -> "FieldHistory":
        frames = [np.asarray(frame, dtype=dtype) for frame in stream]
        if len(frames) != times.size:
            raise GridMismatch(f"Stream produced {len(frames)} frames for {times.size} nodes")
        return cls(grid, times, np.stack(frames))


@dataclass(eq=False)
class SpaceTimePotential:
    """Real potential values[time][...] on uniform time nodes."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    scale: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = as_real(np.asarray(self.values), "potential")
        if self.values.shape != (self.times.size,) + self.grid.shape:
            raise GridMismatch(
                f"Potential shape {self.values.shape} != {(self.times.size,) + self.grid.shape}"
            )
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.max(np.abs(steps - steps[0])) > 1e-9 * abs(steps[0]):
                raise GridMismatch("Potential time nodes must be uniform")
        ensure_finite(self.values, "potential")

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @classmethod
    def zeros(cls, grid: Grid, times: np.ndarray) -> "SpaceTimePotential":
        return cls(grid, times, np.zeros((len(times),) + grid.shape))

    @classmethod
    def from_time_profile(
        cls, grid: Grid, times: np.ndarray, profile: Callable[[np.ndarray], np.ndarray]
    ) -> "SpaceTimePotential":
        """Spatially constant potential V(t)."""
        values = np.asarray(profile(times), dtype=float)
        return cls(grid, times, np.broadcast_to(
            values.reshape((-1,) + (1,) * grid.dim), (len(times),) + grid.shape
        ).copy())

    def check_compatible(self, other: "SpaceTimePotential") -> None:
        if not self.grid.same_as(other.grid) or self.times.shape != other.times.shape or (
            np.max(np.abs(self.times - other.times)) > 1e-12
        ):
            raise GridMismatch("Potentials live on different grids or time nodes")

    def _with(self, values: np.ndarray) -> "SpaceTimePotential":
        return SpaceTimePotential(self.grid, self.times, values)

    def __add__(self, other: "SpaceTimePotential") -> "SpaceTimePotential":
        self.check_compatible(other)
        return self._with(self.values + other.values)

    def __sub__(self, other: "SpaceTimePotential") -> "SpaceTimePotential":
        self.check_compatible(other)
        return self._with(self.values - other.values)

    def __mul__(self, factor: float) -> "SpaceTimePotential":
        return self._with(factor * self.values)

    __rmul__ = __mul__

    def convolve(self, w: PairPotential) -> "SpaceTimePotential":
        """V' = w * V."""
        if w.density_kind == "none":
            return self._with(w.atom_weight * self.values)
        multiplier = lattice_w_hat(w, self.grid)
        return self._with(as_real(self.grid.apply_multiplier(self.values, multiplier), "w*V"))


@lru_cache(maxsize=32)
def lattice_w_hat(w: PairPotential, grid: Grid) -> np.ndarray:
    return w.w_hat(grid.xi_abs)


def equilibrium_mass(f: MomentumDistribution, grid: Grid) -> float:
    """Lattice Riemann sum of f^2, the exact mean of |Y|^2."""
    return float(np.sum(f.f2(grid.xi_abs)) * grid.dxi)


def equilibrium_potential(f: MomentumDistribution, w: PairPotential, grid: Grid) -> float:
    """m = w_hat(0) * sum_k f^2(xi_k) dxi."""
    return float(w.w_hat(np.array([0.0]))[0]) * equilibrium_mass(f, grid)


def _check_nyquist(weights2: np.ndarray, grid: Grid, what: str, tol: float) -> None:
    total = float(np.sum(weights2)) * grid.dxi
    if total == 0.0:
        return
    edge = float(np.max(weights2[grid.edge_mask])) * grid.dxi * grid.size
    if edge > tol * total:
        raise NyquistUnderresolved(
            f"{what} not negligible at the lattice edge: {edge:.3e} vs total {total:.3e}"
        )


def equilibrium_spectrum(
    f: MomentumDistribution, grid: Grid, wiener: WienerSample, tol: float = 1e-8
) -> np.ndarray:
    """Per-realization coefficients f(xi_k) sqrt(dxi) g_k at t = 0."""
    if wiener.shape != grid.shape:
        raise GridMismatch(f"Wiener sample shape {wiener.shape} != grid {grid.shape}")
    _check_nyquist(f.f2(grid.xi_abs), grid, "f", tol)
    amplitude = f.f(grid.xi_abs) * math.sqrt(grid.dxi)
    return wiener.all_coefficients * amplitude


def free_phase(grid: Grid, t: float, m: float) -> np.ndarray:
    return np.exp(-1j * t * (m + grid.xi2))


def sample_equilibrium(
    f: MomentumDistribution, grid: Grid, wiener: WienerSample, t: float, m: float
) -> EnsembleField:
    """Y(t) = sum_k f(xi_k) sqrt(dxi) g_k e^{i(xi_k x - t(m + |xi_k|^2))}."""
    coeffs = equilibrium_spectrum(f, grid, wiener) * free_phase(grid, t, m)
    return EnsembleField(grid, grid.from_fourier(coeffs), t, wiener)


def free_propagate(field: EnsembleField, dt: float, m: float) -> EnsembleField:
    """S(dt) = e^{-i dt (m - Laplacian)}."""
    if dt == 0.0:
        return field.with_values(field.values.copy())
    values = field.grid.apply_multiplier(field.values, free_phase(field.grid, dt, m))
    return field.with_values(values, field.t + dt)


def transport_multiplier(grid: Grid, dt: float, xi: Sequence[float]) -> np.ndarray:
    grid.lattice_index(xi)
    xi = np.asarray(xi, dtype=float)
    eta_dot_xi = np.tensordot(xi, grid.xi_vectors, axes=(0, 0))
    return np.exp(-1j * dt * (grid.xi2 + 2.0 * eta_dot_xi))


def transported_propagate(field: EnsembleField, dt: float, xi: Sequence[float]) -> EnsembleField:
    """S_xi(dt): multiplier e^{-i dt (|eta|^2 + 2 eta.xi)}, no mass term."""
    multiplier = transport_multiplier(field.grid, dt, xi)
    return field.with_values(field.grid.apply_multiplier(field.values, multiplier), field.t + dt)


def equilibrium_stream(
    f: MomentumDistribution, grid: Grid, wiener: WienerSample, times: np.ndarray, m: float
) -> FieldStream:
    base = equilibrium_spectrum(f, grid, wiener)
    for t in times:
        yield grid.from_fourier(base * free_phase(grid, float(t), m))


def free_stream(initial: EnsembleField, times: np.ndarray, m: float) -> FieldStream:
    """S(t - t0) applied to the initial field at every node."""
    grid = initial.grid
    base = grid.to_fourier(initial.values)
    for t in times:
        yield grid.from_fourier(base * free_phase(grid, float(t) - initial.t, m))


def duhamel_stream(
    V: SpaceTimePotential, target: Iterable[np.ndarray], m: float, quadrature: str = "trapezoid"
) -> FieldStream:
    """W_V(target) at each node: W_{j+1} = S(dt)[W_j - i dt/2 F_j] - i dt/2 F_{j+1}, F = V target."""
    if quadrature not in ("trapezoid", "left"):
        raise ValueError(f"Unknown quadrature {quadrature}")
    grid = V.grid
    prop = free_phase(grid, V.dt, m)
    half = 0.5 * V.dt
    source = iter(target)
    try:
        first = next(source)
    except StopIteration:
        raise GridMismatch("Duhamel target stream is empty") from None
    if first.shape[1:] != grid.shape:
        raise GridMismatch(f"Target shape {first.shape[1:]} != grid {grid.shape}")

    F_prev = V.values[0] * first
    W = np.zeros_like(first, dtype=np.complex128)
    yield W
    for j in range(1, V.times.size):
        try:
            current = next(source)
        except StopIteration:
            raise GridMismatch(f"Duhamel target ended at node {j} of {V.times.size}") from None
        F = V.values[j] * current
        if quadrature == "trapezoid":
            W = grid.apply_multiplier(W - 1j * half * F_prev, prop) - 1j * half * F
        else:
            W = grid.apply_multiplier(W - 1j * V.dt * F_prev, prop)
        ensure_finite(W, f"Duhamel step {j}")
        F_prev = F
        yield W


def duhamel_WV(
    V: SpaceTimePotential,
    target: "FieldHistory | Iterable[np.ndarray]",
    m: float,
    quadrature: str = "trapezoid",
) -> FieldHistory:
    """Materialized W_V(target) = -i int_0^t S(t - tau)(V target)(tau) dtau."""
    if isinstance(target, FieldHistory):
        if not target.grid.same_as(V.grid) or target.times.shape != V.times.shape or np.max(
            np.abs(target.times - V.times)
        ) > 1e-12:
            raise GridMismatch("Potential and target use different grids or time nodes")
    return FieldHistory.from_stream(V.grid, V.times, duhamel_stream(V, target, m, quadrature))


@dataclass(eq=False)
class DistributionProfile:
    """Separable g(x, xi) = sum_q a_q(x) b_q(xi) on grid x lattice."""

    grid: Grid
    terms: List[Tuple[np.ndarray, np.ndarray]]

    @classmethod
    def correlated(
        cls, f: MomentumDistribution, grid: Grid, spatial: np.ndarray
    ) -> "DistributionProfile":
        return cls(grid, [(np.asarray(spatial, dtype=complex), f.f(grid.xi_abs))])

    def evaluate(self, x_index: Tuple[int, ...]) -> np.ndarray:
        """g(x, xi_k) over the lattice at one grid point."""
        return sum(a[x_index] * b for a, b in self.terms)  # type: ignore[return-value]


def sample_structured_perturbation(
    g: DistributionProfile, grid: Grid, wiener: WienerSample, tol: float = 1e-8
) -> EnsembleField:
    """Z_g(x) = sum_k sqrt(dxi) g(x, xi_k) g_coef[k] e^{i xi_k x}."""
    if not g.grid.same_as(grid) or wiener.shape != grid.shape:
        raise GridMismatch("Perturbation profile, grid and Wiener sample disagree")
    coeffs = wiener.all_coefficients
    values = np.zeros((wiener.N,) + grid.shape, dtype=np.complex128)
    for spatial, momentum in g.terms:
        if spatial.shape != grid.shape or momentum.shape != grid.shape:
            raise GridMismatch("Profile term shapes must match the grid")
        _check_nyquist(np.abs(momentum) ** 2, grid, "perturbation profile", tol)
        values += spatial * grid.from_fourier(coeffs * momentum * math.sqrt(grid.dxi))
    return EnsembleField(grid, values, 0.0, wiener)


def ensemble_estimate(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and its standard error sqrt(var / N), pointwise."""
    count = samples.shape[0]
    mean = ensemble_mean(samples)
    second = ensemble_mean(np.abs(samples) ** 2)
    variance = np.maximum(second - np.abs(mean) ** 2, 0.0)
    return mean, np.sqrt(variance / count)


@dataclass(eq=False)
class LatticeKernel:
    """h_lat(y) = sum_k f^2(xi_k) dxi cos(xi_k . y), the covariance of the lattice field."""

    grid: Grid
    weights: np.ndarray

    @classmethod
    def from_distribution(cls, f: MomentumDistribution, grid: Grid) -> "LatticeKernel":
        return cls(grid, f.f2(grid.xi_abs) * grid.dxi)

    @property
    def h0(self) -> float:
        return float(np.sum(self.weights))

    def value(self, y: np.ndarray) -> np.ndarray:
        """h_lat at vectors y (last axis is the vector axis)."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        phase = np.tensordot(y, self.grid.xi_vectors, axes=([-1], [0]))
        axes = tuple(range(y.ndim - 1, phase.ndim))
        return np.sum(np.cos(phase) * self.weights, axis=axes)

    def table(self, step: float, J: int) -> np.ndarray:
        """h_lat(step * j) for integer vectors j in [-J, J]^dim, indexed by j + J."""
        alpha = 2.0 * math.pi / self.grid.L * step
        offsets = np.arange(-J, J + 1)
        phases = np.exp(1j * alpha * np.outer(self.grid.k_axis, offsets))
        out: np.ndarray = self.weights.astype(np.complex128)
        for _ in range(self.grid.dim):
            out = np.tensordot(out, phases, axes=([0], [0]))
        return out.real

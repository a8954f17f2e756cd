"""Discrete space-time norms, Strichartz ratios, density operators and Schatten norms."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.linalg import LinAlgError, svdvals

from ..errors import CutoffTooLarge, GridMismatch, InadmissibleExponents, SVDFailure
from .field_core import EnsembleField, Grid, SpaceTimePotential, free_phase, free_stream
from .profiles import MomentumDistribution

logger = logging.getLogger(__name__)


class NormSpec(BaseModel):
    """L^p_t W^{s,q}_x with the L^2_omega reduction inside (pointwise) or outside."""

    model_config = ConfigDict(frozen=True)

    p: float = 2.0
    q: float = 2.0
    s: float = 0.0
    omega_inside: bool = True
    domain: Literal["field", "potential"] = "field"
    label: str = ""

    @field_validator("p", "q")
    @classmethod
    def _exponent(cls, v: float) -> float:
        if not 1.0 <= v <= math.inf:
            raise ValueError(f"Exponent must lie in [1, inf], got {v}")
        return v


def theta_norms(dim: int) -> Dict[str, List[NormSpec]]:
    """Norm families of the fixed-point spaces."""
    inf = math.inf
    if dim == 3:
        return {
            "Z": [
                NormSpec(p=inf, q=2, s=0.5, label="Linf_t H^1/2 L2_w"),
                NormSpec(p=5, q=5, omega_inside=False, label="L2_w L5_tx"),
                NormSpec(p=10 / 3, q=10 / 3, s=0.5, label="L10/3_t W^1/2,10/3 L2_w"),
            ],
            "V": [
                NormSpec(p=2, q=2, s=0.5, domain="potential", label="L2_t H^1/2"),
                NormSpec(p=2.5, q=2.5, domain="potential", label="L5/2_tx"),
            ],
            "0": [
                NormSpec(q=2, s=0.5, label="L2_w H^1/2"),
                NormSpec(q=1.5, label="L3/2_x L2_w"),
            ],
        }
    return {
        "Z": [
            NormSpec(p=inf, q=2, label="Linf_t L2 L2_w"),
            NormSpec(p=4, q=4, label="L4_tx L2_w"),
        ],
        "V": [NormSpec(p=2, q=2, domain="potential", label="L2_tx")],
        "0": [NormSpec(q=2, label="L2 L2_w"), NormSpec(q=4 / 3, label="L4/3_x L2_w")],
    }


def bessel_weight(grid: Grid, s: float) -> np.ndarray:
    return (1.0 + grid.xi2) ** (s / 2.0)


def _lq(values: np.ndarray, q: float, axes: Tuple[int, ...], measure: float) -> np.ndarray:
    if math.isinf(q):
        return np.max(values, axis=axes)
    return (np.sum(values**q, axis=axes) * measure) ** (1.0 / q)


def spacetime_norm(
    u: np.ndarray, spec: NormSpec, grid: Grid, dt: Optional[float] = None
) -> float:
    """Discrete L^p_t W^{s,q}_x (L^2_omega) norm with rectangle weights dt and dx^dim.

    Field arrays are [time][realization][...] ([realization][...] when dt is None);
    potential arrays are [time][...] ([...] when dt is None).
    """
    values = np.asarray(u)
    if dt is None:
        values = values[None]
    has_omega = spec.domain == "field"
    expected = 1 + int(has_omega) + grid.dim
    if values.ndim != expected or values.shape[-grid.dim :] != grid.shape:
        raise GridMismatch(f"Array of shape {np.shape(u)} does not fit a {spec.domain} on the grid")
    if spec.s != 0.0:
        values = grid.apply_multiplier(values, bessel_weight(grid, spec.s))
    magnitude = np.abs(values)
    space_axes = tuple(range(-grid.dim, 0))
    time_measure = 1.0 if dt is None else dt

    if not has_omega:
        per_time = _lq(magnitude, spec.q, space_axes, grid.cell)
        return float(_lq(per_time, spec.p, (0,), time_measure))
    if spec.omega_inside:
        rms = np.sqrt(np.mean(magnitude**2, axis=1))
        per_time = _lq(rms, spec.q, space_axes, grid.cell)
        return float(_lq(per_time, spec.p, (0,), time_measure))
    per_time = _lq(magnitude, spec.q, space_axes, grid.cell)
    per_realization = _lq(per_time, spec.p, (0,), time_measure)
    return float(np.sqrt(np.mean(per_realization**2)))


def theta_norm(u: np.ndarray, specs: Sequence[NormSpec], grid: Grid, dt: Optional[float]) -> float:
    return max(spacetime_norm(u, spec, grid, dt) for spec in specs)


def h_half_norm(values: np.ndarray, grid: Grid, s: float = 0.5) -> float:
    """L^2_omega H^s_x norm of an ensemble at one time."""
    return spacetime_norm(values, NormSpec(q=2, s=s), grid)


def is_admissible(p: float, q: float, s: float, dim: int, tol: float = 1e-9) -> bool:
    """2/p + dim/q = dim/2 - s with 2 <= p, q <= inf and 0 <= s < dim/2."""
    if not (2.0 <= p <= math.inf and 2.0 <= q <= math.inf and 0.0 <= s < dim / 2.0):
        return False
    lhs = (0.0 if math.isinf(p) else 2.0 / p) + (0.0 if math.isinf(q) else dim / q)
    return abs(lhs - (dim / 2.0 - s)) <= tol


class StrichartzReport(BaseModel):
    p: float
    q: float
    s: float
    resolutions: List[int]
    ratios: List[Optional[float]]
    degenerate: bool
    spread: Optional[float]
    stable: bool


def strichartz_ratio(
    initial: Callable[[Grid], EnsembleField],
    ladder: Sequence[Grid],
    p: float,
    q: float,
    s: float,
    T: float,
    steps: int,
    m: float = 0.0,
) -> StrichartzReport:
    """||S(t) Z0||_{L^p_t W^{s,q}_x L^2_omega} / ||Z0||_{L^2_omega H^s} across a resolution ladder."""
    dim = ladder[0].dim
    if not is_admissible(p, q, s, dim):
        raise InadmissibleExponents(
            f"(p, q, s) = ({p}, {q}, {s}) violates 2/p + {dim}/q = {dim}/2 - s"
        )
    times = np.linspace(0.0, T, steps + 1)
    dt = float(times[1] - times[0])
    spec = NormSpec(p=p, q=q, s=s)
    ratios: List[Optional[float]] = []
    for grid in ladder:
        Z0 = initial(grid)
        denominator = h_half_norm(Z0.values, grid, s)
        if denominator == 0.0:
            ratios.append(None)
            continue
        history = np.stack(list(free_stream(Z0, times, m)))
        ratios.append(spacetime_norm(history, spec, grid, dt) / denominator)

    finite = [r for r in ratios if r is not None]
    degenerate = len(finite) < len(ratios)
    spread = (max(finite) / min(finite) - 1.0) if finite and min(finite) > 0 else None
    stable = spread is not None and spread <= 0.2
    logger.info(f"✅ Strichartz ratios {ratios} (spread {spread})")
    return StrichartzReport(
        p=p,
        q=q,
        s=s,
        resolutions=[g.n for g in ladder],
        ratios=ratios,
        degenerate=degenerate,
        spread=spread,
        stable=stable,
    )


@dataclass(eq=False)
class DensityOperator:
    """gamma[k][k'] on the lattice modes with |xi_k| <= xi_cut, orthonormal basis e^{ikx}/L^{d/2}."""

    grid: Grid
    modes: np.ndarray
    matrix: np.ndarray
    xi_cut: float

    @property
    def xi_abs(self) -> np.ndarray:
        return self.grid.xi_abs.ravel()[self.modes]

    @property
    def xi2(self) -> np.ndarray:
        return self.grid.xi2.ravel()[self.modes]

    def weighted(self, s: float) -> np.ndarray:
        weight = (1.0 + self.xi2) ** (s / 2.0)
        return weight[:, None] * self.matrix * weight[None, :]

    def with_matrix(self, matrix: np.ndarray) -> "DensityOperator":
        return DensityOperator(self.grid, self.modes, matrix, self.xi_cut)

    def __sub__(self, other: "DensityOperator") -> "DensityOperator":
        if not np.array_equal(self.modes, other.modes):
            raise GridMismatch("Density operators use different bases")
        return self.with_matrix(self.matrix - other.matrix)

    def __add__(self, other: "DensityOperator") -> "DensityOperator":
        if not np.array_equal(self.modes, other.modes):
            raise GridMismatch("Density operators use different bases")
        return self.with_matrix(self.matrix + other.matrix)

    def conjugate_free(self, t: float, m: float = 0.0) -> "DensityOperator":
        """S(-t) gamma S(t)."""
        phase = np.exp(1j * t * (m + self.xi2))
        return self.with_matrix(phase[:, None] * self.matrix * np.conj(phase)[None, :])

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)).min())

    def off_diagonal_max(self) -> float:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return float(np.max(np.abs(off))) if off.size else 0.0


DENSITY_NORMALIZATION = (
    "gamma[k][k'] = L^d E(c_k conj(c_k')) with c the forward-normalized Fourier "
    "coefficients, so the equilibrium gives gamma_f = diag((2 pi)^d f^2(xi_k))"
)


def basis_modes(grid: Grid, xi_cut: Optional[float]) -> Tuple[np.ndarray, float]:
    cut = 0.5 * grid.nyquist_radius if xi_cut is None else float(xi_cut)
    if cut <= 0.0 or cut >= grid.nyquist_radius:
        raise CutoffTooLarge(
            f"xi_cut={cut:.4g} must lie in (0, {grid.nyquist_radius:.4g}) for n={grid.n}, L={grid.L}"
        )
    mask = (grid.xi_abs <= cut) & ~grid.edge_mask
    return np.nonzero(mask.ravel())[0], cut


def coefficient_vectors(values: np.ndarray, grid: Grid, modes: np.ndarray) -> np.ndarray:
    coeffs = grid.to_fourier(values)
    return coeffs.reshape(coeffs.shape[0], -1)[:, modes]


def density_from_coefficients(grid: Grid, modes: np.ndarray, a: np.ndarray, b: np.ndarray, xi_cut: float) -> DensityOperator:
    """L^d E(|a><b|) for coefficient rows a, b."""
    matrix = grid.volume * (a.T @ b.conj()) / a.shape[0]
    return DensityOperator(grid, modes, matrix, xi_cut)


def build_density_operator(ensemble: EnsembleField, xi_cut: Optional[float] = None) -> DensityOperator:
    """gamma = E|X><X| on the truncated basis."""
    grid = ensemble.grid
    modes, cut = basis_modes(grid, xi_cut)
    c = coefficient_vectors(ensemble.values, grid, modes)
    op = density_from_coefficients(grid, modes, c, c, cut)
    return op.with_matrix(0.5 * (op.matrix + op.matrix.conj().T))


def equilibrium_density(
    f: MomentumDistribution, grid: Grid, xi_cut: Optional[float] = None
) -> DensityOperator:
    """gamma_f = diag((2 pi)^d f^2(xi_k))."""
    modes, cut = basis_modes(grid, xi_cut)
    diag = (2.0 * math.pi) ** grid.dim * f.f2(grid.xi_abs.ravel()[modes])
    return DensityOperator(grid, modes, np.diag(diag.astype(np.complex128)), cut)


def schatten_norm(op: "DensityOperator | np.ndarray", p: float, s: float = 0.0) -> float:
    """l^p norm of the singular values of <xi>^s gamma <xi>^s."""
    if p < 1.0:
        raise ValueError(f"Schatten exponent must be >= 1, got {p}")
    matrix = op.weighted(s) if isinstance(op, DensityOperator) else np.asarray(op)
    if matrix.size == 0:
        return 0.0
    try:
        sigma = svdvals(matrix, check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise SVDFailure(f"SVD failed: {e}") from e
    if math.isinf(p):
        return float(sigma.max())
    peak = float(sigma.max())
    if peak == 0.0:
        return 0.0
    return peak * float(np.sum((sigma / peak) ** p) ** (1.0 / p))


def wave_operator_matrix(
    V: SpaceTimePotential, modes: np.ndarray, upper: Optional[int] = None
) -> np.ndarray:
    """-i int_0^T S(-tau) V(tau) S(tau) dtau on the basis, trapezoid over the time nodes."""
    grid = V.grid
    end = V.M if upper is None else upper
    k = np.stack(np.meshgrid(*([grid.k_axis] * grid.dim), indexing="ij"), axis=-1)
    kvec = k.reshape(-1, grid.dim).astype(np.int64)[modes]
    diff = (kvec[:, None, :] - kvec[None, :, :]) % grid.n
    strides = grid.n ** np.arange(grid.dim - 1, -1, -1)
    index = np.tensordot(diff, strides, axes=([2], [0]))
    xi2 = grid.xi2.ravel()[modes]
    gap = xi2[:, None] - xi2[None, :]

    coeffs = grid.to_fourier(V.values).reshape(V.times.size, -1)
    weights = np.full(end + 1, V.dt)
    weights[0] = weights[-1] = 0.5 * V.dt
    if end == 0:
        weights[0] = 0.0
    out = np.zeros(index.shape, dtype=np.complex128)
    for j in range(end + 1):
        out += weights[j] * np.exp(1j * V.times[j] * gap) * coeffs[j][index]
    return -1j * out


class CorollaryReport(BaseModel):
    times: List[float]
    exponents: List[float]
    s: float
    residual: Dict[str, List[float]]
    coupled_residual: Dict[str, List[float]]
    gamma_plus_norm: Dict[str, float]
    decreasing: Dict[str, bool]
    normalization: str = DENSITY_NORMALIZATION


def _decreasing_tail(values: Sequence[float], count: int = 3) -> bool:
    tail = list(values)[-count:]
    return all(b < a for a, b in zip(tail, tail[1:]))


def corollary_check(
    samples: Sequence[Tuple[float, EnsembleField]],
    Y0: EnsembleField,
    V: SpaceTimePotential,
    Z_plus: EnsembleField,
    f: MomentumDistribution,
    m: float,
    xi_cut: Optional[float] = None,
    p: float = 4.1,
    s: float = 0.5,
    eps_sweep: Sequence[float] = (),
) -> CorollaryReport:
    """||S(-t) gamma(t) S(t) - gamma_f - gamma_+||_{S^{s,p}} at the sampled times.

    gamma_+ = E(|A><Y0| + |Y0><A| + |A><A|) with A = W_{V,+} Y0 + Z_+.
    """
    grid = Y0.grid
    modes, cut = basis_modes(grid, xi_cut)
    exponents = sorted({p} | {4.0 + eps for eps in eps_sweep})

    W = wave_operator_matrix(V, modes)
    y = coefficient_vectors(Y0.values, grid, modes)
    a = y @ W.T + coefficient_vectors(Z_plus.values, grid, modes)
    gamma_plus = (
        density_from_coefficients(grid, modes, a, y, cut)
        + density_from_coefficients(grid, modes, y, a, cut)
        + density_from_coefficients(grid, modes, a, a, cut)
    )
    gamma_f = equilibrium_density(f, grid, cut)
    gamma_y = build_density_operator(Y0, cut)

    times: List[float] = []
    residual: Dict[str, List[float]] = {str(e): [] for e in exponents}
    coupled: Dict[str, List[float]] = {str(e): [] for e in exponents}
    for t, X in samples:
        back = build_density_operator(X, cut).conjugate_free(t, m)
        times.append(float(t))
        for e in exponents:
            residual[str(e)].append(schatten_norm(back - gamma_f - gamma_plus, e, s))
            coupled[str(e)].append(schatten_norm(back - gamma_y - gamma_plus, e, s))

    report = CorollaryReport(
        times=times,
        exponents=exponents,
        s=s,
        residual=residual,
        coupled_residual=coupled,
        gamma_plus_norm={str(e): schatten_norm(gamma_plus, e, s) for e in exponents},
        decreasing={str(e): _decreasing_tail(coupled[str(e)]) for e in exponents},
    )
    logger.info(f"✅ Corollary check over {len(times)} times, basis of {modes.size} modes")
    return report


def back_propagate(values: np.ndarray, grid: Grid, t: float, m: float) -> np.ndarray:
    """S(-t) applied to an ensemble array."""
    return grid.apply_multiplier(values, free_phase(grid, -t, m))

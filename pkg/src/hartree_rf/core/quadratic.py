"""Quadratic and cubic potential terms, their explicit Fourier form and the kernel K."""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import simpson

from ..errors import CollinearPair, ComplexityGuard, GridMismatch, KernelRangeTooShort
from .field_core import (
    FieldHistory,
    Grid,
    LatticeKernel,
    SpaceTimePotential,
    WienerSample,
    as_real,
    duhamel_stream,
    ensemble_estimate,
    equilibrium_stream,
    real_inner,
)
from .profiles import MomentumDistribution, PairKernel, PairPotential

logger = logging.getLogger(__name__)

ZSource = Union[FieldHistory, Iterable[np.ndarray]]
Kernel = Union[PairKernel, LatticeKernel]

DEFAULT_FLOP_BUDGET = 2e8


def _estimate_potential(
    grid: Grid, times: np.ndarray, frames: Iterable[Tuple[np.ndarray, np.ndarray]]
) -> SpaceTimePotential:
    """Stack per-node (mean, standard error) pairs into a potential with its scale."""
    means, errors = [], []
    for mean, err in frames:
        means.append(as_real(mean, "ensemble estimate"))
        errors.append(err)
    potential = SpaceTimePotential(grid, times, np.stack(means))
    potential.scale = np.stack(errors)
    return potential


def _stream_of(source: ZSource) -> Iterator[np.ndarray]:
    return iter(source.values) if isinstance(source, FieldHistory) else iter(source)


def _check_pair(U: SpaceTimePotential, V: SpaceTimePotential) -> None:
    U.check_compatible(V)


def Q1_ensemble(
    Z: ZSource,
    V: SpaceTimePotential,
    f: MomentumDistribution,
    wiener: WienerSample,
    m: float,
    w: Optional[PairPotential] = None,
) -> SpaceTimePotential:
    """Q1(Z, V') = 2 Re E(conj(W_V'(Y)) Z + conj(Y) W_V'(Z)); V' = w * V when w is given."""
    V_prime = V if w is None else V.convolve(w)
    grid, times = V.grid, V.times
    if isinstance(Z, FieldHistory) and (
        not Z.grid.same_as(grid) or Z.times.shape != times.shape
    ):
        raise GridMismatch("Q1: Z history and potential disagree on grid or time nodes")

    y_target, y_product = itertools.tee(equilibrium_stream(f, grid, wiener, times, m))
    z_target, z_product = itertools.tee(_stream_of(Z))
    frames = (
        ensemble_estimate(2.0 * (real_inner(wy, z) + real_inner(y, wz)))
        for y, z, wy, wz in zip(
            y_product,
            z_product,
            duhamel_stream(V_prime, y_target, m),
            duhamel_stream(V_prime, z_target, m),
        )
    )
    return _estimate_potential(grid, times, frames)


def Q2_ensemble(
    U: SpaceTimePotential,
    V: SpaceTimePotential,
    f: MomentumDistribution,
    grid: Grid,
    wiener: WienerSample,
    m: float,
) -> SpaceTimePotential:
    """2 Re E[conj(W_V Y) W_U Y + conj(Y) W_V W_U Y + conj(Y) W_U W_V Y]."""
    _check_pair(U, V)
    times = U.times
    y_u, y_v, y_product = itertools.tee(equilibrium_stream(f, grid, wiener, times, m), 3)
    wu_target, wu_product = itertools.tee(duhamel_stream(U, y_u, m))
    wv_target, wv_product = itertools.tee(duhamel_stream(V, y_v, m))
    frames = (
        ensemble_estimate(2.0 * (real_inner(wv, wu) + real_inner(y, wvu) + real_inner(y, wuv)))
        for y, wu, wv, wvu, wuv in zip(
            y_product,
            wu_product,
            wv_product,
            duhamel_stream(V, wu_target, m),
            duhamel_stream(U, wv_target, m),
        )
    )
    return _estimate_potential(grid, times, frames)


def Q2_self(
    V: SpaceTimePotential, f: MomentumDistribution, grid: Grid, wiener: WienerSample, m: float
) -> SpaceTimePotential:
    """Q2(V) = E|W_V Y|^2 + 2 Re E(conj(Y) W_V^2 Y), half the symmetric form at U = V."""
    half = Q2_ensemble(V, V, f, grid, wiener, m)
    out = 0.5 * half
    out.scale = None if half.scale is None else 0.5 * half.scale
    return out


@dataclass(eq=False)
class _LatticeGeometry:
    kvec: np.ndarray
    xi2: np.ndarray
    dots: np.ndarray
    diff_index: np.ndarray


def _geometry(grid: Grid) -> _LatticeGeometry:
    k = np.stack(np.meshgrid(*([grid.k_axis] * grid.dim), indexing="ij"), axis=-1)
    kvec = k.reshape(-1, grid.dim).astype(np.int64)
    xi = kvec * (2.0 * math.pi / grid.L)
    diff = (kvec[:, None, :] - kvec[None, :, :]) % grid.n
    strides = grid.n ** np.arange(grid.dim - 1, -1, -1)
    return _LatticeGeometry(
        kvec=kvec,
        xi2=np.sum(xi**2, axis=1),
        dots=xi @ xi.T,
        diff_index=np.tensordot(diff, strides, axes=([2], [0])),
    )


def _trapezoid_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    if n == 0:
        w[0] = 0.0
    return w


def _q2_lattice_sum(
    U: SpaceTimePotential,
    V: SpaceTimePotential,
    kernel: Kernel,
    route: str,
    flop_budget: float,
    truncate: bool = False,
) -> SpaceTimePotential:
    _check_pair(U, V)
    grid, M, dt = U.grid, U.M, U.dt
    geo = _geometry(grid)
    K = grid.size
    Uc = grid.to_fourier(U.values).reshape(M + 1, K)
    Vc = grid.to_fourier(V.values).reshape(M + 1, K)

    amplitude = np.max(np.abs(Uc), axis=0) + np.max(np.abs(Vc), axis=0)
    peak = float(amplitude.max()) if amplitude.size else 0.0
    out = np.zeros((M + 1, K), dtype=np.complex128)
    if peak == 0.0:
        return SpaceTimePotential(grid, U.times, np.zeros_like(U.values))
    active = np.nonzero(amplitude > 1e-13 * peak)[0]

    pairs = (M + 1) * (M + 2) // 2
    triples = (M + 1) * (M + 2) * (M + 3) // 6
    flops = float(K * active.size) * (20.0 * pairs + 8.0 * triples)
    J = M * (grid.n // 2)
    if isinstance(kernel, LatticeKernel):
        flops += float(grid.n) * (2 * J + 1) ** grid.dim
    if flops > flop_budget:
        raise ComplexityGuard(
            f"Q2 Fourier sum needs ~{flops:.2e} flops, above the budget {flop_budget:.2e}"
        )
    logger.debug(f"📋 Q2 Fourier route={route}: {active.size} active modes, ~{flops:.2e} flops")

    if isinstance(kernel, LatticeKernel):
        table = kernel.table(4.0 * math.pi * dt / grid.L, J)
    else:
        reach = 2.0 * U.times[-1] * 2.0 * float(np.sqrt(geo.xi2.max()))
        if kernel.r_hmax < reach:
            message = f"h tabulated to {kernel.r_hmax:.1f}, arguments reach {reach:.1f}"
            if not truncate:
                raise KernelRangeTooShort(f"{message}; pass truncate=True to treat the rest as zero")
            logger.warning(f"⚠️ {message}; treated as zero")

    k_rows = geo.kvec
    k_cols = geo.kvec[active]
    E_rows = geo.xi2[:, None]
    E_cols = geo.xi2[active][None, :]
    G = geo.dots[:, active]
    D = geo.diff_index[:, active]
    step = 4.0 * math.pi * dt / grid.L
    weights = [_trapezoid_weights(n, dt) for n in range(M + 1)]

    for a in range(M + 1):
        for b in range(M + 1 - a):
            j = a * k_rows[:, None, :] + b * k_cols[None, :, :]
            if isinstance(kernel, LatticeKernel):
                h = table[tuple(np.moveaxis(j + J, -1, 0))]
            else:
                h = kernel.h_at(step * np.sqrt(np.sum(j.astype(float) ** 2, axis=-1)))
            theta = a * dt * (E_rows - G)
            phi = a * dt * G + b * dt * E_cols
            if route == "q2":
                factor = 4.0 * h * np.sin(theta) * np.sin(phi)
            elif route == "j1":
                factor = 2.0 * h * np.cos(theta - phi)
            else:
                factor = -2.0 * h * np.cos(theta + phi)

            for n in range(a + b, M + 1):
                i = n - a
                jj = i - b
                if route == "j1":
                    weight = weights[n][i] * weights[n][jj]
                    if b == 0:
                        weight *= 0.5
                else:
                    weight = weights[n][i] * weights[i][jj]
                if weight == 0.0:
                    continue
                bracket = Vc[i][D] * Uc[jj][active][None, :] + Uc[i][D] * Vc[jj][active][None, :]
                out[n] += weight * np.sum(factor * bracket, axis=1)

    values = grid.from_fourier(out.reshape((M + 1,) + grid.shape))
    return SpaceTimePotential(grid, U.times, as_real(values, f"Q2 {route}"))


def Q2_fourier(
    U: SpaceTimePotential,
    V: SpaceTimePotential,
    h: Kernel,
    grid: Grid,
    flop_budget: float = DEFAULT_FLOP_BUDGET,
    truncate: bool = False,
) -> SpaceTimePotential:
    """Explicit lattice sum of the symmetric form with the 4 sin(theta) sin(phi) kernel.

    theta = (t - tau1)(|eta|^2 - eta2.eta), phi = (t - tau1) eta2.eta + (tau1 - tau2)|eta2|^2,
    h evaluated at 2(t - tau1) eta + 2(tau1 - tau2) eta2, nested trapezoid in time.
    """
    if not grid.same_as(U.grid):
        raise GridMismatch("Q2_fourier: grid does not match the potentials")
    return _q2_lattice_sum(U, V, h, "q2", flop_budget, truncate)


def J1_fourier(
    U: SpaceTimePotential,
    V: SpaceTimePotential,
    h: Kernel,
    grid: Grid,
    flop_budget: float = DEFAULT_FLOP_BUDGET,
    truncate: bool = False,
) -> SpaceTimePotential:
    """The 2 Re E(conj(W_V Y) W_U Y) part: 2 h cos(theta - phi) over the full time square."""
    if not grid.same_as(U.grid):
        raise GridMismatch("J1_fourier: grid does not match the potentials")
    return _q2_lattice_sum(U, V, h, "j1", flop_budget, truncate)


def J2_fourier(
    U: SpaceTimePotential,
    V: SpaceTimePotential,
    h: Kernel,
    grid: Grid,
    flop_budget: float = DEFAULT_FLOP_BUDGET,
    truncate: bool = False,
) -> SpaceTimePotential:
    """The nested part: -2 h cos(theta + phi) over tau2 < tau1."""
    if not grid.same_as(U.grid):
        raise GridMismatch("J2_fourier: grid does not match the potentials")
    return _q2_lattice_sum(U, V, h, "j2", flop_budget, truncate)


@dataclass(eq=False)
class QKernelSample:
    """K(t, s) = h(2t eta + 2s eta2) sin(t(|eta|^2 - eta2.eta)) sin(t eta2.eta + s|eta2|^2)."""

    eta: np.ndarray
    eta2: np.ndarray
    t: np.ndarray
    s: np.ndarray
    values: np.ndarray
    norm_L2L1_sq: float
    norm_L2L2_sq: float
    C1: float
    C2: float
    det: float
    p: int = 2

    @property
    def bound(self) -> float:
        """det^{-1/2} C_p(h)."""
        return (self.C1 if self.p == 1 else self.C2) / math.sqrt(self.det)

    @property
    def norm_sq(self) -> float:
        return self.norm_L2L1_sq if self.p == 1 else self.norm_L2L2_sq

    def to_row(self) -> dict:
        return {
            "eta": self.eta.tolist(),
            "eta2": self.eta2.tolist(),
            "p": self.p,
            "norm_sq": self.norm_sq,
            "bound": self.bound,
            "ratio": self.norm_sq / self.bound if self.bound > 0 else 0.0,
        }


def _axis_nodes(extent: float, step: float) -> np.ndarray:
    half = max(int(math.ceil(extent / step)), 8)
    return np.linspace(-extent, extent, 2 * half + 1)


def kernel_K_norms(
    eta: Sequence[float], eta2: Sequence[float], h: PairKernel, p: int = 2
) -> QKernelSample:
    """Tabulate K on a grid fitted to its oscillation and decay scales; both L2_t Lp_s norms."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    eta = np.asarray(eta, dtype=float)
    eta2 = np.asarray(eta2, dtype=float)
    n1, n2, dot = float(eta @ eta), float(eta2 @ eta2), float(eta @ eta2)
    det = n1 * n2 - dot**2
    if n1 == 0.0 or n2 == 0.0 or det < 1e-10 * n1 * n2:
        raise CollinearPair(f"eta={eta.tolist()} and eta2={eta2.tolist()} are collinear")

    absolute = np.abs(h.h)
    peak = float(absolute.max())
    if peak == 0.0:
        extent = 1.0
    else:
        significant = np.nonzero(absolute > 1e-14 * peak)[0]
        extent = float(h.r[min(significant[-1] + 1, h.r.size - 1)])

    resolution = extent / 256.0
    t_rate = max(abs(n1 - dot), abs(dot), 1e-12)
    s_rate = max(n2, 1e-12)
    t_extent = extent * math.sqrt(n2) / (2.0 * math.sqrt(det))
    s_extent = extent * math.sqrt(n1) / (2.0 * math.sqrt(det))
    t = _axis_nodes(t_extent, min(math.pi / (16.0 * t_rate), resolution / (2.0 * math.sqrt(n1))))
    s = _axis_nodes(s_extent, min(math.pi / (16.0 * s_rate), resolution / (2.0 * math.sqrt(n2))))

    T, S = np.meshgrid(t, s, indexing="ij")
    y = 2.0 * T[..., None] * eta + 2.0 * S[..., None] * eta2
    values = (
        h.h_at(np.linalg.norm(y, axis=-1))
        * np.sin(T * (n1 - dot))
        * np.sin(T * dot + S * n2)
    )
    absolute_k = np.abs(values)
    l1 = float(simpson(simpson(absolute_k, x=s, axis=1) ** 2, x=t))
    l2 = float(simpson(simpson(absolute_k**2, x=s, axis=1), x=t))
    sample = QKernelSample(
        eta=eta,
        eta2=eta2,
        t=t,
        s=s,
        values=values,
        norm_L2L1_sq=l1,
        norm_L2L2_sq=l2,
        C1=h.C1,
        C2=h.C2,
        det=det,
        p=p,
    )
    logger.debug(
        f"📋 K norms eta={eta.tolist()} eta2={eta2.tolist()}: p={p} "
        f"norm^2={sample.norm_sq:.4e} bound={sample.bound:.4e}"
    )
    return sample


def _chain(potentials: Sequence[SpaceTimePotential], source: Iterator[np.ndarray], m: float) -> Iterator[np.ndarray]:
    """W_{p_last} ... W_{p_first}(source)."""
    stream = source
    for V in potentials:
        stream = duhamel_stream(V, stream, m)
    return stream


def cubic_C1(
    V: SpaceTimePotential,
    U: SpaceTimePotential,
    W: SpaceTimePotential,
    f: MomentumDistribution,
    grid: Grid,
    wiener: WienerSample,
    m: float,
) -> SpaceTimePotential:
    """C1(V,U,W) = 2 Re E(conj(W_V Y) W_U W_W Y + conj(Y) W_V W_U W_W Y)."""
    _check_pair(V, U)
    _check_pair(V, W)
    times = V.times
    y_v, y_chain, y_product = itertools.tee(equilibrium_stream(f, grid, wiener, times, m), 3)
    uw_product, uw_target = itertools.tee(_chain([W, U], y_chain, m))
    frames = (
        ensemble_estimate(2.0 * (real_inner(wv, uw) + real_inner(y, vuw)))
        for y, wv, uw, vuw in zip(
            y_product,
            duhamel_stream(V, y_v, m),
            uw_product,
            duhamel_stream(V, uw_target, m),
        )
    )
    return _estimate_potential(grid, times, frames)


def cubic_C2(
    V: SpaceTimePotential,
    U: SpaceTimePotential,
    Z: ZSource,
    f: MomentumDistribution,
    grid: Grid,
    wiener: WienerSample,
    m: float,
) -> SpaceTimePotential:
    """C2(V,U,Z) = 2 Re E(conj(W_V Y) W_U Z + conj(Y) W_V W_U Z)."""
    _check_pair(V, U)
    times = V.times
    y_v, y_product = itertools.tee(equilibrium_stream(f, grid, wiener, times, m))
    uz_product, uz_target = itertools.tee(duhamel_stream(U, _stream_of(Z), m))
    frames = (
        ensemble_estimate(2.0 * (real_inner(wv, uz) + real_inner(y, vuz)))
        for y, wv, uz, vuz in zip(
            y_product,
            duhamel_stream(V, y_v, m),
            uz_product,
            duhamel_stream(V, uz_target, m),
        )
    )
    return _estimate_potential(grid, times, frames)


def cubic_terms(
    V: SpaceTimePotential,
    U: SpaceTimePotential,
    third: Union[SpaceTimePotential, ZSource],
    f: MomentumDistribution,
    grid: Grid,
    wiener: WienerSample,
    m: float,
) -> SpaceTimePotential:
    """C1(V, U, W) when the third argument is a potential, C2(V, U, Z) when it is a field."""
    if isinstance(third, SpaceTimePotential):
        return cubic_C1(V, U, third, f, grid, wiener, m)
    return cubic_C2(V, U, third, f, grid, wiener, m)


def cubic_C1_self(
    V: SpaceTimePotential, f: MomentumDistribution, grid: Grid, wiener: WienerSample, m: float
) -> SpaceTimePotential:
    """C1(V) = 2 Re E(conj(W_V Y) W_V^2 Y + conj(Y) W_V^3 Y) by repeated application."""
    times = V.times
    y_first, y_product = itertools.tee(equilibrium_stream(f, grid, wiener, times, m))
    w1_product, w1_next = itertools.tee(duhamel_stream(V, y_first, m))
    w2_product, w2_next = itertools.tee(duhamel_stream(V, w1_next, m))
    frames = (
        ensemble_estimate(2.0 * (real_inner(w1, w2) + real_inner(y, w3)))
        for y, w1, w2, w3 in zip(y_product, w1_product, w2_product, duhamel_stream(V, w2_next, m))
    )
    return _estimate_potential(grid, times, frames)

"""Ensemble split-step evolution of the Hartree equation and the Picard fixed-point solver."""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from ..errors import BoxGuardViolated, GridMismatch, HypothesisFailure, NoContraction
from ..errors import ValidationFailure
from .diagnostics import NormSpec, back_propagate, h_half_norm, spacetime_norm, theta_norm
from .diagnostics import theta_norms
from .field_core import (
    EnsembleField,
    FieldHistory,
    Grid,
    SpaceTimePotential,
    WienerSample,
    as_real,
    duhamel_stream,
    ensemble_mean,
    ensure_finite,
    equilibrium_potential,
    equilibrium_stream,
    free_phase,
    free_stream,
    lattice_w_hat,
    sample_equilibrium,
)
from .linear_response import (
    MarginReport,
    ResponseSymbol,
    free_source,
    invert_id_minus_L2,
    margin_report,
    response_symbol_for,
)
from .profiles import HypothesisReport, MomentumDistribution, PairKernel, PairPotential
from .quadratic import Q1_ensemble, Q2_self, cubic_C1_self, cubic_C2

logger = logging.getLogger(__name__)

Mode = Literal["frozen", "midpoint"]
PicardMode = Literal["second_order", "third_order"]


def sample_indices(M: int, count: int) -> List[int]:
    """Dyadic node indices M/2^k, k < count, ascending and distinct."""
    picks = {int(round(M / 2**k)) for k in range(count)}
    return sorted(i for i in picks if 0 <= i <= M)


@dataclass
class EvolutionConfig:
    dt: float = 0.01
    steps: int = 100
    mode: Mode = "midpoint"
    box_guard_factor: float = 4.0
    enforce_box_guard: bool = True
    phase_budget: float = math.pi
    checkpoint_every: int = 0
    samples: int = 4

    @classmethod
    def from_block(cls, block: object, samples: int = 4) -> "EvolutionConfig":
        return cls(
            dt=block.dt,  # type: ignore[attr-defined]
            steps=block.steps,  # type: ignore[attr-defined]
            mode=block.mode,  # type: ignore[attr-defined]
            box_guard_factor=block.box_guard_factor,  # type: ignore[attr-defined]
            enforce_box_guard=block.enforce_box_guard,  # type: ignore[attr-defined]
            phase_budget=block.phase_budget,  # type: ignore[attr-defined]
            checkpoint_every=block.checkpoint_every,  # type: ignore[attr-defined]
            samples=samples,
        )

    @property
    def T(self) -> float:
        return self.dt * self.steps


class BoxGuardReport(BaseModel):
    support: float
    xi_radius: float
    required: float
    L: float
    satisfied: bool
    wraps: bool


def box_guard(Z0: np.ndarray, grid: Grid, T: float, factor: float, level: float = 1e-2) -> BoxGuardReport:
    """L >= factor * support(Z0) + 2 xi_Z T, with support and xi_Z read at ``level`` of the peak."""
    density = np.mean(np.abs(Z0) ** 2, axis=0)
    peak = float(density.max())
    if peak == 0.0:
        return BoxGuardReport(support=0.0, xi_radius=0.0, required=0.0, L=grid.L, satisfied=True, wraps=False)

    center = np.array(np.unravel_index(int(np.argmax(density)), grid.shape)) * grid.dx
    d = grid.x_vectors - center.reshape((grid.dim,) + (1,) * grid.dim)
    d = (d + grid.L / 2.0) % grid.L - grid.L / 2.0
    distance = np.sqrt(np.sum(d**2, axis=0))
    support = 2.0 * float(distance[density > level * peak].max())

    spectrum = np.mean(np.abs(grid.to_fourier(Z0)) ** 2, axis=0)
    xi_radius = float(grid.xi_abs[spectrum > level * spectrum.max()].max())
    travel = 2.0 * xi_radius * T
    required = factor * support + travel
    return BoxGuardReport(
        support=support,
        xi_radius=xi_radius,
        required=required,
        L=grid.L,
        satisfied=required <= grid.L,
        wraps=travel > grid.L,
    )


@dataclass(eq=False)
class HartreeTrajectory:
    grid: Grid
    times: np.ndarray
    m: float
    mode: Mode
    density_difference: SpaceTimePotential
    potential: SpaceTimePotential
    sample_indices: List[int]
    X_samples: List[np.ndarray]
    Z_samples: List[np.ndarray]
    Y0: EnsembleField
    X: EnsembleField
    mass_drift: float
    deviation: List[float]
    guard: BoxGuardReport

    @property
    def stationary(self) -> bool:
        return all(d == 0.0 for d in self.deviation)

    def summary(self) -> Dict[str, object]:
        return {
            "steps": int(self.times.size - 1),
            "dt": float(self.times[1] - self.times[0]),
            "mode": self.mode,
            "m": self.m,
            "max_mass_drift_per_step": self.mass_drift,
            "max_deviation": max(self.deviation),
            "stationary": self.stationary,
            "potential_sup": float(np.max(np.abs(self.potential.values))),
            "box_guard": self.guard.model_dump(),
        }


def _density_difference(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return ensemble_mean(np.abs(X) ** 2) - ensemble_mean(np.abs(Y) ** 2)


def _convolve_frame(values: np.ndarray, w: PairPotential, grid: Grid) -> np.ndarray:
    if w.density_kind == "none":
        return w.atom_weight * values
    return as_real(grid.apply_multiplier(values, lattice_w_hat(w, grid)), "w*V")


def _paired_equilibrium(X0: EnsembleField, f: MomentumDistribution, m: float, Y0: Optional[EnsembleField]) -> EnsembleField:
    if Y0 is None:
        if X0.provenance is None:
            raise ValidationFailure("X0 carries no Wiener sample to pair the equilibrium with")
        return sample_equilibrium(f, X0.grid, X0.provenance, X0.t, m)
    if not Y0.grid.same_as(X0.grid) or Y0.N != X0.N:
        raise GridMismatch("X0 and its paired equilibrium disagree on grid or ensemble size")
    if X0.provenance is not None and Y0.provenance is not None and (
        X0.provenance.seed != Y0.provenance.seed or X0.provenance.N != Y0.provenance.N
    ):
        raise ValidationFailure("X0 and Y0 were drawn from different Wiener samples")
    return Y0


def evolve_hartree(
    X0: EnsembleField,
    f: MomentumDistribution,
    w: PairPotential,
    cfg: EvolutionConfig,
    Y0: Optional[EnsembleField] = None,
    checkpoint: Optional[Callable[[int, EnsembleField], None]] = None,
) -> HartreeTrajectory:
    """Strang split-step of i dX/dt = -Lap X + Phi X with Phi = w*(E|X|^2 - E|Y|^2) + m.

    The paired equilibrium Y is advanced by the same stepper with Phi = m, so X0 = Y0
    stays an exact fixed point of the discrete flow.
    """
    grid = X0.grid
    m = equilibrium_potential(f, w, grid)
    Y0 = _paired_equilibrium(X0, f, m, Y0)
    dt, steps = cfg.dt, cfg.steps
    logger.info(f"🚀 Evolving {X0.N} realizations on n={grid.n}^{grid.dim}: {steps} steps of {dt} ({cfg.mode})")

    guard = box_guard(X0.values - Y0.values, grid, cfg.T, cfg.box_guard_factor)
    if not guard.satisfied:
        message = (
            f"Box guard: L={grid.L} < {cfg.box_guard_factor} * support {guard.support:.3g} "
            f"+ 2 * xi {guard.xi_radius:.3g} * T {cfg.T:.3g}"
        )
        if cfg.enforce_box_guard:
            raise BoxGuardViolated(message)
        logger.warning(f"⚠️ {message}")
    if guard.wraps:
        logger.warning(f"⚠️ Fastest resolved perturbation wave wraps the box before T={cfg.T}")

    phase_load = dt * (m + float(grid.xi2.max()))
    if phase_load > cfg.phase_budget:
        logger.warning(f"⚠️ Step phase dt*(m+|xi|^2_max)={phase_load:.3g} exceeds budget {cfg.phase_budget:.3g}")

    half = free_phase(grid, 0.5 * dt, 0.0)
    phase_y = np.exp(-1j * dt * np.full(grid.shape, m))
    times = X0.t + dt * np.arange(steps + 1)
    picks = sample_indices(steps, cfg.samples)

    X, Y = X0.values.astype(np.complex128), Y0.values.astype(np.complex128)
    densities = [_density_difference(X, Y)]
    X_samples: List[np.ndarray] = []
    Z_samples: List[np.ndarray] = []
    deviation: List[float] = []
    mass_drift = 0.0
    if 0 in picks:
        X_samples.append(X.copy())
        Z_samples.append(X - Y)
        deviation.append(float(np.max(np.abs(X - Y))))

    for step in range(1, steps + 1):
        mass_before = np.sum(np.abs(X) ** 2, axis=tuple(range(1, X.ndim)))
        X_half = grid.apply_multiplier(X, half)
        Y_half = grid.apply_multiplier(Y, half)
        if cfg.mode == "midpoint":
            V = _density_difference(X_half, Y_half)
        else:
            V = densities[-1]
        phi = _convolve_frame(V, w, grid) + m
        X = grid.apply_multiplier(np.exp(-1j * dt * phi) * X_half, half)
        Y = grid.apply_multiplier(phase_y * Y_half, half)
        ensure_finite(X, f"X at step {step}")

        mass_after = np.sum(np.abs(X) ** 2, axis=tuple(range(1, X.ndim)))
        drift = np.abs(mass_after - mass_before) / np.maximum(mass_before, 1e-300)
        mass_drift = max(mass_drift, float(drift.max()))
        densities.append(_density_difference(X, Y))

        if step in picks:
            X_samples.append(X.copy())
            Z_samples.append(X - Y)
            deviation.append(float(np.max(np.abs(X - Y))))
        if checkpoint is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            checkpoint(step, EnsembleField(grid, X, float(times[step]), X0.provenance))

    difference = SpaceTimePotential(grid, times, np.stack(densities))
    trajectory = HartreeTrajectory(
        grid=grid,
        times=times,
        m=m,
        mode=cfg.mode,
        density_difference=difference,
        potential=difference.convolve(w),
        sample_indices=picks,
        X_samples=X_samples,
        Z_samples=Z_samples,
        Y0=Y0,
        X=EnsembleField(grid, X, float(times[-1]), X0.provenance),
        mass_drift=mass_drift,
        deviation=deviation,
        guard=guard,
    )
    logger.info(
        f"✅ Evolution done: max |X-Y|={max(deviation):.3e}, mass drift/step={mass_drift:.2e}"
    )
    return trajectory


@dataclass
class FixedPointConfig:
    T: float = 1.0
    steps: int = 32
    tol: float = 1e-8
    max_iter: int = 20
    mode: PicardMode = "second_order"
    linear_only: bool = False
    override_hypotheses: bool = False
    c_min: float = 1e-3
    history_dtype: str = "complex128"
    patience: int = 3

    @classmethod
    def from_block(cls, block: object, history_dtype: str = "complex128") -> "FixedPointConfig":
        return cls(
            T=block.T,  # type: ignore[attr-defined]
            steps=block.steps,  # type: ignore[attr-defined]
            tol=block.tol,  # type: ignore[attr-defined]
            max_iter=block.max_iter,  # type: ignore[attr-defined]
            mode="third_order" if block.cubic else "second_order",  # type: ignore[attr-defined]
            linear_only=block.linear_only,  # type: ignore[attr-defined]
            override_hypotheses=block.override_hypotheses,  # type: ignore[attr-defined]
            c_min=block.c_min,  # type: ignore[attr-defined]
            history_dtype=history_dtype,
        )

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)


@dataclass(eq=False)
class FixedPointState:
    """Current Picard iterate (Z, V) with its residual history."""

    iterate: int
    times: np.ndarray
    Z0: EnsembleField
    Z: FieldHistory
    V: SpaceTimePotential
    V_prime: SpaceTimePotential
    m: float
    mode: PicardMode
    linear_only: bool
    margin: Optional[MarginReport] = None
    residuals: List[Tuple[float, float]] = field(default_factory=list)
    relative: List[float] = field(default_factory=list)
    contraction: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def grid(self) -> Grid:
        return self.Z0.grid

    @property
    def contraction_factor(self) -> Optional[float]:
        finite = [c for c in self.contraction if math.isfinite(c)]
        return finite[-1] if finite else None

    def residual_rows(self) -> List[Tuple[int, float, float, float]]:
        return [(k + 1, dz, dv, rel) for k, ((dz, dv), rel) in enumerate(zip(self.residuals, self.relative))]

    def summary(self) -> Dict[str, object]:
        return {
            "iterations": self.iterate,
            "converged": self.converged,
            "mode": self.mode,
            "linear_only": self.linear_only,
            "final_residual": self.relative[-1] if self.relative else None,
            "contraction_factor": self.contraction_factor,
            "margin": None if self.margin is None else self.margin.margin,
            "V_sup": float(np.max(np.abs(self.V.values))),
        }


def _history_zeros(grid: Grid, times: np.ndarray, N: int, dtype: str) -> FieldHistory:
    return FieldHistory(grid, times, np.zeros((times.size, N) + grid.shape, dtype=dtype))


def _density_potential(Z: FieldHistory) -> SpaceTimePotential:
    return SpaceTimePotential(Z.grid, Z.times, np.stack([ensemble_mean(np.abs(z) ** 2) for z in Z]))


class _PicardMap:
    """(Z, V) -> (Id - L)^{-1}[C0 + Q(Z, w*V)] for a fixed Z0."""

    def __init__(
        self,
        Z0: EnsembleField,
        f: MomentumDistribution,
        w: PairPotential,
        wiener: WienerSample,
        symbol: ResponseSymbol,
        cfg: FixedPointConfig,
        m: float,
    ):
        self.grid = Z0.grid
        self.times = cfg.times
        self.f, self.w, self.wiener, self.symbol, self.cfg, self.m = f, w, wiener, symbol, cfg, m
        self.source = free_source(Z0, f, wiener, self.times, m)
        self.SZ0 = FieldHistory.from_stream(self.grid, self.times, free_stream(Z0, self.times, m), cfg.history_dtype)

    def _equilibrium(self):
        return equilibrium_stream(self.f, self.grid, self.wiener, self.times, self.m)

    def field_update(self, Z: FieldHistory, V_prime: SpaceTimePotential) -> FieldHistory:
        """S(t)Z0 + W_V'(Z) + W_V'(W_V'(Y))."""
        if self.cfg.linear_only:
            return self.SZ0
        m = self.m
        stream = (
            sz + wz + wwy
            for sz, wz, wwy in zip(
                self.SZ0,
                duhamel_stream(V_prime, iter(Z.values), m),
                duhamel_stream(V_prime, duhamel_stream(V_prime, self._equilibrium(), m), m),
            )
        )
        return FieldHistory.from_stream(self.grid, self.times, stream, self.cfg.history_dtype)

    def potential_source(self, Z: FieldHistory, V_prime: SpaceTimePotential) -> SpaceTimePotential:
        if self.cfg.linear_only:
            return self.source
        grid, f, wiener, m = self.grid, self.f, self.wiener, self.m
        total = self.source + _density_potential(Z) + Q2_self(V_prime, f, grid, wiener, m)
        if self.cfg.mode == "third_order":
            # Q1 split along Z = S(t)Z0 + W^2 Y + W Z
            total = (
                total
                + Q1_ensemble(self.SZ0, V_prime, f, wiener, m)
                + cubic_C1_self(V_prime, f, grid, wiener, m)
                + cubic_C2(V_prime, V_prime, Z, f, grid, wiener, m)
            )
        else:
            total = total + Q1_ensemble(Z, V_prime, f, wiener, m)
        return total

    def __call__(
        self, Z: FieldHistory, V: SpaceTimePotential
    ) -> Tuple[FieldHistory, SpaceTimePotential, MarginReport]:
        V_prime = V.convolve(self.w)
        Z_new = self.field_update(Z, V_prime)
        rhs = self.potential_source(Z, V_prime)
        V_new, margin = invert_id_minus_L2(rhs, self.w, self.symbol, self.cfg.c_min)
        return Z_new, V_new, margin


def _check_preconditions(hypotheses: Optional[HypothesisReport], cfg: FixedPointConfig) -> None:
    if hypotheses is None or hypotheses.passed:
        return
    failed = [name for name, entry in hypotheses.entries.items() if not entry.passed]
    if not cfg.override_hypotheses:
        raise HypothesisFailure(f"Hypotheses failed: {', '.join(failed)}")
    logger.warning(f"⚠️ Proceeding despite failed hypotheses {failed} (override set)")


def picard_fixed_point(
    Z0: EnsembleField,
    f: MomentumDistribution,
    w: PairPotential,
    h: PairKernel,
    cfg: FixedPointConfig,
    hypotheses: Optional[HypothesisReport] = None,
    symbol: Optional[ResponseSymbol] = None,
) -> FixedPointState:
    """Picard iteration of the (Z, V) system on [0, cfg.T]."""
    _check_preconditions(hypotheses, cfg)
    if Z0.provenance is None:
        raise ValidationFailure("Z0 carries no Wiener sample for the paired equilibrium")
    wiener = Z0.provenance
    grid, times = Z0.grid, cfg.times
    dt = float(times[1] - times[0])
    m = equilibrium_potential(f, w, grid)
    symbol = symbol or response_symbol_for(grid, times, h)
    margin = margin_report(w, symbol, cfg.c_min)
    logger.info(
        f"🚀 Picard ({cfg.mode}{', linear only' if cfg.linear_only else ''}) on [0, {cfg.T}] "
        f"with {cfg.steps} steps; margin {margin.margin:.3e}"
    )

    step = _PicardMap(Z0, f, w, wiener, symbol, cfg, m)
    norms = theta_norms(grid.dim)
    Z = _history_zeros(grid, times, Z0.N, cfg.history_dtype)
    V = SpaceTimePotential.zeros(grid, times)
    state = FixedPointState(
        iterate=0, times=times, Z0=Z0, Z=Z, V=V, V_prime=V.convolve(w), m=m,
        mode=cfg.mode, linear_only=cfg.linear_only, margin=margin,
    )
    for k in range(1, cfg.max_iter + 1):
        Z_new, V_new, margin = step(state.Z, state.V)
        dZ = theta_norm(Z_new.values - state.Z.values, norms["Z"], grid, dt)
        dV = theta_norm(V_new.values - state.V.values, norms["V"], grid, dt)
        size = max(theta_norm(Z_new.values, norms["Z"], grid, dt), theta_norm(V_new.values, norms["V"], grid, dt))
        residual = max(dZ, dV)
        relative = residual / size if size > 0.0 else residual

        previous = state.relative[-1] if state.relative else None
        state.Z, state.V, state.V_prime, state.margin = Z_new, V_new, V_new.convolve(w), margin
        state.iterate = k
        state.residuals.append((dZ, dV))
        state.relative.append(relative)
        if previous is not None and previous > 0.0:
            state.contraction.append(relative / previous)
        logger.debug(f"📋 Picard iterate {k}: dZ={dZ:.3e} dV={dV:.3e} relative={relative:.3e}")

        if relative <= cfg.tol:
            state.converged = True
            break
        recent = state.contraction[-cfg.patience :]
        if len(recent) == cfg.patience and all(c >= 1.0 for c in recent):
            raise NoContraction(
                f"Contraction factor >= 1 for {cfg.patience} consecutive iterates: "
                f"{[round(c, 4) for c in recent]}",
                state=state,
            )

    if state.converged:
        logger.info(f"✅ Picard converged at iterate {state.iterate} (residual {state.relative[-1]:.3e})")
    else:
        logger.warning(f"⚠️ Picard stopped after {state.iterate} iterates at residual {state.relative[-1]:.3e}")
    return state


def picard_dim2_cubic(
    Z0: EnsembleField,
    f: MomentumDistribution,
    w: PairPotential,
    h: PairKernel,
    cfg: FixedPointConfig,
    hypotheses: Optional[HypothesisReport] = None,
    symbol: Optional[ResponseSymbol] = None,
) -> FixedPointState:
    """Third-order system: S1 source and the cubic terms C1, C2 in place of Q1."""
    if Z0.grid.dim != 2:
        raise ValidationFailure(f"The third-order system is two-dimensional, got dim={Z0.grid.dim}")
    cubic = FixedPointConfig(**{**cfg.__dict__, "mode": "third_order"})
    return picard_fixed_point(Z0, f, w, h, cubic, hypotheses, symbol)


class ScatteringReport(BaseModel):
    times: List[float]
    profile_norms: List[float]
    cauchy: List[float]
    tilde_cauchy: List[float]
    tilde_residual_L3: List[float]
    cauchy_decreasing: bool
    tilde_decreasing: bool
    Z_plus_norm: float
    Z_tilde_plus_norm: float


@dataclass(eq=False)
class ScatteringResult:
    report: ScatteringReport
    Z_plus: EnsembleField
    Z_tilde_plus: EnsembleField


def _decreasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def _frames_at(stream, picks: Sequence[int]) -> List[np.ndarray]:
    wanted = set(picks)
    return [frame for j, frame in enumerate(stream) if j in wanted]


def extract_scattering(
    source: Union[HartreeTrajectory, FixedPointState],
    f: MomentumDistribution,
    samples: int = 4,
) -> ScatteringResult:
    """Back-propagated profiles S(-t)Z(t) and S(-t)W_V'(Y)(t) with their Cauchy trends."""
    grid, times, m = source.grid, source.times, source.m
    wiener: Optional[WienerSample]
    if isinstance(source, HartreeTrajectory):
        picks = source.sample_indices
        V_prime = source.potential
        wiener = source.Y0.provenance
    else:
        picks = sample_indices(times.size - 1, samples)
        V_prime = source.V_prime
        wiener = source.Z0.provenance
    if wiener is None:
        raise ValidationFailure("Scattering extraction needs the paired Wiener sample")

    wy = _frames_at(duhamel_stream(V_prime, equilibrium_stream(f, grid, wiener, times, m), m), picks)
    if isinstance(source, HartreeTrajectory):
        z = [total - response for total, response in zip(source.Z_samples, wy)]
    else:
        z = [source.Z.values[j] for j in picks]

    sample_times = [float(times[j]) for j in picks]
    profiles = [back_propagate(frame, grid, t, m) for frame, t in zip(z, sample_times)]
    tilde = [back_propagate(frame, grid, t, m) for frame, t in zip(wy, sample_times)]
    cauchy = [h_half_norm(b - a, grid) for a, b in zip(profiles, profiles[1:])]
    tilde_cauchy = [h_half_norm(b - a, grid) for a, b in zip(tilde, tilde[1:])]

    l3 = NormSpec(q=3.0)
    tilde_plus = tilde[-1]
    residual = [
        spacetime_norm(frame - back_propagate(tilde_plus, grid, -t, m), l3, grid)
        for frame, t in zip(wy, sample_times)
    ]
    report = ScatteringReport(
        times=sample_times,
        profile_norms=[h_half_norm(p, grid) for p in profiles],
        cauchy=cauchy,
        tilde_cauchy=tilde_cauchy,
        tilde_residual_L3=residual,
        cauchy_decreasing=_decreasing(cauchy),
        tilde_decreasing=_decreasing(tilde_cauchy),
        Z_plus_norm=h_half_norm(profiles[-1], grid),
        Z_tilde_plus_norm=h_half_norm(tilde_plus, grid),
    )
    if not (report.cauchy_decreasing and report.tilde_decreasing):
        logger.warning("⚠️ Scattering Cauchy differences are not decreasing over the sampled window")
    logger.info(f"✅ Scattering profiles extracted at {len(sample_times)} times")
    return ScatteringResult(
        report=report,
        Z_plus=EnsembleField(grid, profiles[-1], 0.0, wiener),
        Z_tilde_plus=EnsembleField(grid, tilde_plus, 0.0, wiener),
    )


def reconstruct_fields(
    state: FixedPointState, f: MomentumDistribution, picks: Sequence[int]
) -> List[Tuple[float, EnsembleField]]:
    """X(t) = Y(t) + W_V'(Y)(t) + Z(t) at the picked nodes of a fixed-point state."""
    grid, times, m = state.grid, state.times, state.m
    wiener = state.Z0.provenance
    if wiener is None:
        raise ValidationFailure("Fixed-point state carries no Wiener sample")
    y_target, y_sum = itertools.tee(equilibrium_stream(f, grid, wiener, times, m))
    wanted = set(picks)
    out: List[Tuple[float, EnsembleField]] = []
    for j, (y, wy) in enumerate(zip(y_sum, duhamel_stream(state.V_prime, y_target, m))):
        if j in wanted:
            t = float(times[j])
            out.append((t, EnsembleField(grid, y + wy + state.Z.values[j], t, wiener)))
    return out

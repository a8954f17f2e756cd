import logging
import math
from functools import cached_property
from typing import Optional

import numpy as np

from ..config import LabSettings, RunConfig
from ..core.field_core import (
    DistributionProfile,
    EnsembleField,
    Grid,
    LatticeKernel,
    WienerSample,
    equilibrium_potential,
    gaussian_bump,
    sample_equilibrium,
    sample_structured_perturbation,
)
from ..core.linear_response import EpsilonReport, ResponseSymbol, epsilon_h, response_symbol_for
from ..core.profiles import (
    HypothesisReport,
    MomentumDistribution,
    PairKernel,
    PairPotential,
    build_kernel_h,
    check_hypotheses,
)
from ..core.solver import EvolutionConfig, FixedPointConfig
from ..errors import ConfigError

logger = logging.getLogger(__name__)

# Seed offset of the Wiener sample behind "independent" perturbations
INDEPENDENT_STREAM = 0x9E3779B97F4A7C15


class HartreeLab:
    """Builds every numerical object of a run once, from one resolved configuration."""

    def __init__(self, config: RunConfig, settings: Optional[LabSettings] = None):
        self.config = config
        self.settings = settings or LabSettings()

    def _checked(self, what: str, build):
        try:
            return build()
        except ValueError as e:
            raise ConfigError(f"Invalid {what}: {e}") from e

    @cached_property
    def grid(self) -> Grid:
        block = self.config.grid
        return self.grid_with(block.n)

    def grid_with(self, n: int) -> Grid:
        block = self.config.grid
        return self._checked(
            "grid", lambda: Grid(dim=block.dim, n=n, L=block.L, workers=self.settings.workers)
        )

    @cached_property
    def distribution(self) -> MomentumDistribution:
        return self._checked(
            "profile", lambda: MomentumDistribution.from_block(self.config.profile, self.config.grid.dim)
        )

    @cached_property
    def potential(self) -> PairPotential:
        return self._checked(
            "potential", lambda: PairPotential.from_block(self.config.potential, self.config.grid.dim)
        )

    @cached_property
    def kernel(self) -> PairKernel:
        block = self.config.profile
        return build_kernel_h(
            self.distribution, nodes=block.nodes, r_min=block.r_min, r_hmax=block.r_hmax
        )

    @cached_property
    def lattice_kernel(self) -> LatticeKernel:
        return LatticeKernel.from_distribution(self.distribution, self.grid)

    @cached_property
    def epsilon(self) -> EpsilonReport:
        return epsilon_h(self.kernel)

    @cached_property
    def hypotheses(self) -> HypothesisReport:
        return check_hypotheses(self.distribution, self.potential, self.epsilon.value, self.kernel)

    @cached_property
    def m(self) -> float:
        return equilibrium_potential(self.distribution, self.potential, self.grid)

    def wiener_for(self, grid: Grid, offset: int = 0) -> WienerSample:
        block = self.config.ensemble
        return WienerSample(seed=(block.seed + offset) % 2**64, N=block.N, shape=grid.shape)

    @cached_property
    def wiener(self) -> WienerSample:
        return self.wiener_for(self.grid)

    @cached_property
    def equilibrium(self) -> EnsembleField:
        return sample_equilibrium(self.distribution, self.grid, self.wiener, 0.0, self.m)

    def perturbation_on(self, grid: Grid) -> EnsembleField:
        """Z0 on ``grid`` as configured by the perturbation block."""
        block = self.config.perturbation
        wiener = self.wiener_for(grid)
        if block.kind == "none" or block.amplitude == 0.0:
            return EnsembleField(grid, np.zeros((wiener.N,) + grid.shape, dtype=np.complex128), 0.0, wiener)
        if block.center is not None and len(block.center) != grid.dim:
            raise ConfigError(f"perturbation.center needs {grid.dim} coordinates")
        bump = block.amplitude * gaussian_bump(grid, block.width, block.center)
        source = wiener if block.kind == "correlated" else self.wiener_for(grid, INDEPENDENT_STREAM)
        profile = DistributionProfile.correlated(self.distribution, grid, bump)
        Z = sample_structured_perturbation(profile, grid, source)
        return EnsembleField(grid, Z.values, 0.0, wiener)

    @cached_property
    def perturbation(self) -> EnsembleField:
        return self.perturbation_on(self.grid)

    @cached_property
    def initial(self) -> EnsembleField:
        """X0 = Y0 + Z0, paired with the equilibrium through the shared Wiener sample."""
        return self.equilibrium.with_values(self.equilibrium.values + self.perturbation.values)

    @cached_property
    def fixed_point_config(self) -> FixedPointConfig:
        return FixedPointConfig.from_block(self.config.fixed_point, self.settings.history_dtype)

    @cached_property
    def evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig.from_block(self.config.evolution, self.config.diagnostics.sample_times)

    def matched_evolution_config(self) -> EvolutionConfig:
        """Evolution on the time nodes of the fixed-point horizon."""
        fp = self.fixed_point_config
        cfg = self.evolution_config
        return EvolutionConfig(
            dt=fp.T / fp.steps,
            steps=fp.steps,
            mode=cfg.mode,
            box_guard_factor=cfg.box_guard_factor,
            enforce_box_guard=cfg.enforce_box_guard,
            phase_budget=cfg.phase_budget,
            checkpoint_every=0,
            samples=cfg.samples,
        )

    @cached_property
    def symbol(self) -> ResponseSymbol:
        return response_symbol_for(self.grid, self.fixed_point_config.times, self.kernel)

    def describe(self) -> None:
        c = self.config
        logger.info("📋 Run configuration:")
        logger.info(f"   - Profile: {c.profile.kind} (T={c.profile.T}, mu={c.profile.mu})")
        logger.info(f"   - Potential: atom {c.potential.atom_weight}, density {c.potential.density_kind}")
        logger.info(f"   - Grid: dim={c.grid.dim}, n={c.grid.n}, L={c.grid.L}")
        logger.info(f"   - Ensemble: N={c.ensemble.N}, seed={c.ensemble.seed}")
        logger.info(f"   - Workers: {self.settings.workers}")
        if c.grid.L < 2.0 * math.pi:
            logger.warning(f"⚠️ Box L={c.grid.L} is smaller than one unit wavelength")

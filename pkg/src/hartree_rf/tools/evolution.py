import logging
from typing import Any, Dict, List

import numpy as np

from ..core.field_core import EnsembleField, SpaceTimePotential
from ..core.solver import (
    FixedPointState,
    HartreeTrajectory,
    evolve_hartree,
    extract_scattering,
    picard_dim2_cubic,
    picard_fixed_point,
)
from ..errors import HartreeError, NoContraction
from ..lab import HartreeLab, RunWriter
from .base import Command

logger = logging.getLogger(__name__)


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.abs(values) ** 2)))


def potential_rows(V: SpaceTimePotential) -> List[tuple]:
    flat = V.values.reshape(V.times.size, -1)
    return [
        (float(t), float(np.max(np.abs(row))), float(np.mean(row)), _rms(row))
        for t, row in zip(V.times, flat)
    ]


class EvolutionTools:
    def __init__(self, lab: HartreeLab):
        self.lab = lab

    def get_commands(self) -> List[Command]:
        """Return time-evolution and fixed-point commands."""
        return [
            Command(
                name="evolve",
                description="Split-step evolution of the Hartree ensemble with its paired equilibrium",
                handler="handle_evolve",
            ),
            Command(
                name="fixed-point",
                description="Picard iteration of the (Z, V) system",
                handler="handle_fixed_point",
            ),
            Command(
                name="scatter-report",
                description="Scattering profiles from both solvers and their potential agreement",
                handler="handle_scatter_report",
            ),
        ]

    def _solve(self) -> FixedPointState:
        lab = self.lab
        cfg = lab.fixed_point_config
        solver = picard_dim2_cubic if cfg.mode == "third_order" else picard_fixed_point
        return solver(
            lab.perturbation, lab.distribution, lab.potential, lab.kernel, cfg, lab.hypotheses, lab.symbol
        )

    def _write_state(self, writer: RunWriter, state: FixedPointState) -> None:
        writer.write_csv(
            "picard_residuals.csv", ["iterate", "dZ", "dV", "relative"], state.residual_rows()
        )
        writer.write_csv("V_series.csv", ["t", "sup", "mean", "rms"], potential_rows(state.V))
        writer.write_field("V", state.V.values, state.grid, state.times.tolist(), dtype="float64")
        writer.write_json("fixed_point.json", state.summary())

    def _write_trajectory(self, writer: RunWriter, trajectory: HartreeTrajectory) -> None:
        writer.write_csv(
            "potential_series.csv", ["t", "sup", "mean", "rms"], potential_rows(trajectory.potential)
        )
        writer.write_csv(
            "deviation.csv",
            ["t", "max_abs_X_minus_Y"],
            [(float(trajectory.times[j]), d) for j, d in zip(trajectory.sample_indices, trajectory.deviation)],
        )
        writer.write_json("evolution.json", trajectory.summary())

    def handle_evolve(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for evolve."""
        try:
            lab = self.lab
            dtype = lab.config.output.field_dtype

            def checkpoint(step: int, X: EnsembleField) -> None:
                writer.write_field(f"X_step{step:06d}", X.values, X.grid, X.t, X.provenance, dtype)

            trajectory = evolve_hartree(
                lab.initial, lab.distribution, lab.potential, lab.evolution_config, lab.equilibrium, checkpoint
            )
            self._write_trajectory(writer, trajectory)
            X = trajectory.X
            writer.write_field("X_final", X.values, X.grid, X.t, X.provenance, dtype)
            summary = trajectory.summary()
            if lab.config.perturbation.kind == "none":
                summary["exact_stationarity"] = trajectory.stationary
            return summary
        except HartreeError as e:
            logger.error(f"Error in evolve: {e}")
            raise

    def handle_fixed_point(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for fixed-point."""
        try:
            try:
                state = self._solve()
            except NoContraction as e:
                if isinstance(e.state, FixedPointState):
                    self._write_state(writer, e.state)
                raise
            self._write_state(writer, state)
            writer.write_field(
                "Z_final", state.Z.values[-1], state.grid, float(state.times[-1]), state.Z0.provenance,
                self.lab.config.output.field_dtype,
            )
            return state.summary()
        except HartreeError as e:
            logger.error(f"Error in fixed-point: {e}")
            raise

    def handle_scatter_report(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for scatter-report."""
        try:
            lab = self.lab
            samples = lab.config.diagnostics.sample_times
            state = self._solve()
            trajectory = evolve_hartree(
                lab.initial, lab.distribution, lab.potential, lab.matched_evolution_config(), lab.equilibrium
            )
            from_picard = extract_scattering(state, lab.distribution, samples)
            from_ensemble = extract_scattering(trajectory, lab.distribution, samples)

            difference = state.V.values - trajectory.density_difference.values
            reference = float(np.sqrt(np.sum(trajectory.density_difference.values**2)))
            gap = float(np.sqrt(np.sum(difference**2)))
            cross = {
                "V_gap_L2": gap,
                "V_ensemble_L2": reference,
                "relative": gap / reference if reference > 0 else gap,
            }
            self._write_state(writer, state)
            self._write_trajectory(writer, trajectory)
            writer.write_json(
                "scattering.json",
                {"picard": from_picard.report, "ensemble": from_ensemble.report, "cross_solver": cross},
            )
            writer.write_csv(
                "scattering_cauchy.csv",
                ["t", "picard_cauchy", "ensemble_cauchy", "picard_tilde_cauchy"],
                [
                    (t, a, b, c)
                    for t, a, b, c in zip(
                        from_picard.report.times[1:],
                        from_picard.report.cauchy,
                        from_ensemble.report.cauchy,
                        from_picard.report.tilde_cauchy,
                    )
                ],
            )
            writer.write_field(
                "Z_plus", from_picard.Z_plus.values, state.grid, 0.0, state.Z0.provenance,
                lab.config.output.field_dtype,
            )
            logger.info(f"✅ Cross-solver potential gap {cross['relative']:.3e} (relative)")
            return {
                "converged": state.converged,
                "cauchy_decreasing": from_picard.report.cauchy_decreasing,
                "tilde_decreasing": from_picard.report.tilde_decreasing,
                "cross_solver_relative": cross["relative"],
            }
        except HartreeError as e:
            logger.error(f"Error in scatter-report: {e}")
            raise

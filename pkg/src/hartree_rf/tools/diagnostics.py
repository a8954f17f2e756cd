import logging
from typing import Any, Dict, List

import numpy as np

from ..core.diagnostics import (
    build_density_operator,
    corollary_check,
    equilibrium_density,
    schatten_norm,
    spacetime_norm,
    strichartz_ratio,
    theta_norms,
)
from ..core.field_core import free_stream
from ..core.solver import extract_scattering, picard_fixed_point, reconstruct_fields, sample_indices
from ..errors import CutoffTooLarge, HartreeError
from ..lab import HartreeLab, RunWriter
from .base import Command

logger = logging.getLogger(__name__)


class DiagnosticsTools:
    def __init__(self, lab: HartreeLab):
        self.lab = lab

    def get_commands(self) -> List[Command]:
        """Return norm and density-operator commands."""
        return [
            Command(
                name="norms",
                description="Theta norms of the perturbation and Strichartz ratios over the ladder",
                handler="handle_norms",
            ),
            Command(
                name="density",
                description="Density operators of the equilibrium and the perturbed ensemble",
                handler="handle_density",
            ),
            Command(
                name="corollary-check",
                description="Schatten residuals of S(-t) gamma(t) S(t) against gamma_f + gamma_+",
                handler="handle_corollary_check",
            ),
        ]

    def handle_norms(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for norms."""
        try:
            lab = self.lab
            block = lab.config.diagnostics
            grid, Z0 = lab.grid, lab.perturbation
            families = theta_norms(grid.dim)
            times = lab.fixed_point_config.times
            dt = float(times[1] - times[0])
            history = np.stack(list(free_stream(Z0, times, lab.m)))

            rows = []
            for spec in families["0"]:
                rows.append(("0", spec.label, spacetime_norm(Z0.values, spec, grid)))
            for spec in families["Z"]:
                rows.append(("Z", spec.label, spacetime_norm(history, spec, grid, dt)))
            writer.write_csv("theta_norms.csv", ["family", "norm", "value"], rows)

            ladder = [lab.grid_with(n) for n in block.ladder]
            strichartz = strichartz_ratio(
                lab.perturbation_on,
                ladder,
                block.strichartz_p,
                block.strichartz_q,
                block.strichartz_s,
                block.strichartz_T,
                block.strichartz_steps,
                lab.m,
            )
            writer.write_json("norms.json", {"theta": rows, "strichartz": strichartz})
            return {
                "theta_0": max(v for family, _, v in rows if family == "0"),
                "theta_Z_free": max(v for family, _, v in rows if family == "Z"),
                "strichartz_ratios": strichartz.ratios,
                "strichartz_stable": strichartz.stable,
            }
        except HartreeError as e:
            logger.error(f"Error in norms: {e}")
            raise

    def handle_density(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for density."""
        try:
            lab = self.lab
            block = lab.config.diagnostics
            gamma_y = build_density_operator(lab.equilibrium, block.xi_cut)
            gamma_x = build_density_operator(lab.initial, block.xi_cut)
            gamma_f = equilibrium_density(lab.distribution, lab.grid, gamma_y.xi_cut)
            p, s = block.schatten_p, block.schatten_s

            diagonal = np.real(np.diag(gamma_y.matrix))
            exact = np.real(np.diag(gamma_f.matrix))
            writer.write_csv(
                "density_diagonal.csv",
                ["xi", "gamma_Y", "gamma_f"],
                zip(gamma_y.xi_abs, diagonal, exact),
            )
            report = {
                "modes": int(gamma_y.modes.size),
                "xi_cut": gamma_y.xi_cut,
                "hermitian_defect": gamma_x.hermitian_defect(),
                "min_eigenvalue_Y": gamma_y.min_eigenvalue(),
                "min_eigenvalue_X": gamma_x.min_eigenvalue(),
                "off_diagonal_max_Y": gamma_y.off_diagonal_max(),
                "diagonal_relative_error": float(np.max(np.abs(diagonal - exact)) / max(exact.max(), 1e-300)),
                "schatten_Y_minus_f": schatten_norm(gamma_y - gamma_f, p, s),
                "schatten_X_minus_Y": schatten_norm(gamma_x - gamma_y, p, s),
                "p": p,
                "s": s,
            }
            writer.write_json("density.json", report)
            logger.info(f"✅ Density operators on {report['modes']} modes")
            return report
        except HartreeError as e:
            logger.error(f"Error in density: {e}")
            raise

    def handle_corollary_check(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for corollary-check."""
        try:
            lab = self.lab
            block = lab.config.diagnostics
            f = lab.distribution
            state = picard_fixed_point(
                lab.perturbation, f, lab.potential, lab.kernel, lab.fixed_point_config, lab.hypotheses, lab.symbol
            )
            picks = sample_indices(state.times.size - 1, block.sample_times)
            samples = reconstruct_fields(state, f, picks)
            scattering = extract_scattering(state, f, block.sample_times)
            report = corollary_check(
                samples,
                lab.equilibrium,
                state.V_prime,
                scattering.Z_plus,
                f,
                lab.m,
                block.xi_cut,
                block.schatten_p,
                block.schatten_s,
                block.eps_sweep,
            )

            doubled = None
            cut = 0.5 * lab.grid.nyquist_radius if block.xi_cut is None else block.xi_cut
            try:
                wide = corollary_check(
                    samples[-1:], lab.equilibrium, state.V_prime, scattering.Z_plus, f, lab.m,
                    2.0 * cut, block.schatten_p, block.schatten_s,
                )
                doubled = wide.gamma_plus_norm[str(block.schatten_p)]
            except CutoffTooLarge:
                logger.warning(f"⚠️ Cutoff doubling to {2.0 * cut:.3g} exceeds the lattice; skipped")

            key = str(block.schatten_p)
            rows = [
                (t, report.residual[key][j], report.coupled_residual[key][j])
                for j, t in enumerate(report.times)
            ]
            writer.write_csv("corollary.csv", ["t", "residual", "coupled_residual"], rows)
            base = report.gamma_plus_norm[key]
            stability = None if doubled is None or base == 0.0 else abs(doubled / base - 1.0)
            writer.write_json(
                "corollary.json",
                {"report": report, "gamma_plus_doubled_cut": doubled, "cut_stability": stability},
            )
            return {
                "decreasing": report.decreasing[key],
                "final_residual": report.residual[key][-1],
                "final_coupled_residual": report.coupled_residual[key][-1],
                "gamma_plus_norm": base,
                "cut_stability": stability,
            }
        except HartreeError as e:
            logger.error(f"Error in corollary-check: {e}")
            raise

import logging
import math
from typing import Any, Dict, List

import numpy as np

from ..core.field_core import ensemble_estimate, ensemble_mean, equilibrium_mass
from ..core.linear_response import compute_mf, margin_report
from ..errors import HartreeError, HypothesisFailure
from ..lab import HartreeLab, RunWriter
from .base import Command

logger = logging.getLogger(__name__)

COVARIANCE_OFFSETS = 16


class EquilibriumTools:
    def __init__(self, lab: HartreeLab):
        self.lab = lab

    def get_commands(self) -> List[Command]:
        """Return equilibrium and response commands."""
        return [
            Command(
                name="check-hypotheses",
                description="Tabulate h, eps_h and every (f, w) hypothesis with its margin",
                handler="handle_check_hypotheses",
            ),
            Command(
                name="sample-equilibrium",
                description="Sample Y0 and check the Wiener isometry, Gaussianity and covariance",
                handler="handle_sample_equilibrium",
            ),
            Command(
                name="response-map",
                description="Tabulate m_f(omega, xi) and the invertibility margin of Id - L2",
                handler="handle_response_map",
            ),
        ]

    def handle_check_hypotheses(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for check-hypotheses."""
        try:
            lab = self.lab
            kernel = lab.kernel
            eps = lab.epsilon
            report = lab.hypotheses
            writer.write_json("hypotheses.json", {"hypotheses": report, "eps_h": eps})
            writer.write_csv("kernel_h.csv", ["r", "h"], kernel.to_rows())
            writer.write_csv(
                "eps_h_trend.csv", ["level", "sup_re_mf"], list(enumerate(eps.trend))
            )
            failed = sorted(name for name, entry in report.entries.items() if not entry.passed)
            summary = {
                "passed": report.passed,
                "eps_h": eps.value,
                "eps_h_stabilized": eps.stabilized,
                "warnings": eps.warnings,
                "failed": failed,
            }
            if not report.passed:
                logger.error(f"❌ Hypotheses failed: {failed}")
                raise HypothesisFailure(f"Hypotheses failed: {', '.join(failed)}")
            logger.info(f"✅ All hypotheses hold (eps_h={eps.value:.4e})")
            return summary
        except HartreeError as e:
            logger.error(f"Error in check-hypotheses: {e}")
            raise

    def handle_sample_equilibrium(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for sample-equilibrium."""
        try:
            lab = self.lab
            grid, Y = lab.grid, lab.equilibrium
            exact = equilibrium_mass(lab.distribution, grid)
            intensity = np.abs(Y.values) ** 2
            density, density_err = ensemble_estimate(intensity)
            mass_estimate = float(np.mean(density))
            mass_scale = float(np.mean(density_err))
            kurtosis = float(np.mean(ensemble_mean(intensity**2) / density**2))

            rows = []
            covariance_error = 0.0
            for j in range(COVARIANCE_OFFSETS):
                shifted = np.roll(Y.values, -j, axis=1)
                estimate = complex(np.mean(ensemble_mean(np.conj(Y.values) * shifted)))
                r = j * grid.dx
                offset = np.zeros(grid.dim)
                offset[0] = r
                lattice = float(lab.lattice_kernel.value(offset)[0])
                continuum = float(lab.kernel.h_at(np.array([r]))[0])
                covariance_error = max(covariance_error, abs(estimate - lattice))
                rows.append((r, estimate.real, estimate.imag, lattice, continuum))

            writer.write_field("Y0", Y.values, grid, 0.0, lab.wiener, lab.config.output.field_dtype)
            writer.write_csv("covariance.csv", ["r", "re_estimate", "im_estimate", "h_lattice", "h"], rows)
            tolerance = 5.0 / math.sqrt(Y.N)
            report = {
                "mass_exact": exact,
                "mass_estimate": mass_estimate,
                "mass_error": abs(mass_estimate - exact),
                "mass_tolerance": 5.0 * mass_scale,
                "kurtosis_ratio": kurtosis,
                "kurtosis_tolerance": tolerance,
                "covariance_error": covariance_error,
                "covariance_tolerance": tolerance * lab.lattice_kernel.h0,
            }
            report["passed"] = (
                report["mass_error"] <= report["mass_tolerance"]
                and abs(kurtosis - 2.0) <= tolerance
                and covariance_error <= report["covariance_tolerance"]
            )
            writer.write_json("equilibrium.json", report)
            logger.info(f"✅ Equilibrium sampled: mass {mass_estimate:.6e} vs {exact:.6e}")
            return report
        except HartreeError as e:
            logger.error(f"Error in sample-equilibrium: {e}")
            raise

    def handle_response_map(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for response-map."""
        try:
            lab = self.lab
            block = lab.config.verification
            omega = np.linspace(-block.omega_max, block.omega_max, block.n_omega)
            xi = np.linspace(block.xi_max / block.n_xi, block.xi_max, block.n_xi)
            symbol = compute_mf(lab.kernel, omega, xi)
            writer.write_csv("response_map.csv", ["omega", "xi", "re_mf", "im_mf", "error"], symbol.to_rows())

            c_min = lab.config.fixed_point.c_min
            continuum = margin_report(lab.potential, symbol, c_min)
            horizon = margin_report(lab.potential, lab.symbol, c_min)
            writer.write_json("response_margin.json", {"map": continuum, "horizon": horizon})
            summary = {
                "map_margin": continuum.margin,
                "horizon_margin": horizon.margin,
                "passed": continuum.passed and horizon.passed,
                "max_quadrature_error": float(symbol.error.max()),
            }
            logger.info(f"✅ Response map tabulated, margin {continuum.margin:.4e}")
            return summary
        except HartreeError as e:
            logger.error(f"Error in response-map: {e}")
            raise

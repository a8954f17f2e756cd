import logging
import math
from typing import Any, Dict, List

import numpy as np

from ..core.field_core import Grid, SpaceTimePotential
from ..core.linear_response import linear_cancellation_diag
from ..core.quadratic import J1_fourier, J2_fourier, Q2_ensemble, Q2_fourier, kernel_K_norms
from ..errors import HartreeError, ValidationFailure
from ..lab import HartreeLab, RunWriter
from .base import Command

logger = logging.getLogger(__name__)

BOUND_SAFETY = 10.0


def _l2(values: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(values) ** 2)))


def _frame_norms(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(values.reshape(values.shape[0], -1)) ** 2, axis=1))


def mode_potentials(
    grid: Grid, times: np.ndarray, modes: List[List[int]], amplitude: float
) -> tuple[SpaceTimePotential, SpaceTimePotential]:
    """U = a S(x) cos t and V = a S(x)(1 - t/2), S a sum of cos(xi_k . x) over the modes."""
    spatial = np.zeros(grid.shape)
    for mode in modes:
        k = (list(mode) + [0] * grid.dim)[: grid.dim]
        xi = 2.0 * math.pi / grid.L * np.asarray(k, dtype=float)
        spatial += np.cos(np.tensordot(xi, grid.x_vectors, axes=(0, 0)))
    shape = (-1,) + (1,) * grid.dim
    U = amplitude * np.cos(times).reshape(shape) * spatial
    V = amplitude * (1.0 - 0.5 * times).reshape(shape) * spatial
    return SpaceTimePotential(grid, times, U), SpaceTimePotential(grid, times, V)


class VerificationTools:
    def __init__(self, lab: HartreeLab):
        self.lab = lab

    def get_commands(self) -> List[Command]:
        """Return oracle and bound verification commands."""
        return [
            Command(
                name="q2-verify",
                description="Compare the ensemble, explicit Fourier and split forms of Q2",
                handler="handle_q2_verify",
            ),
            Command(
                name="kernel-bound",
                description="Norms of the kernel K over a scaling family against det^-1/2 C_p(h)",
                handler="handle_kernel_bound",
            ),
        ]

    def handle_q2_verify(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for q2-verify."""
        try:
            lab = self.lab
            block = lab.config.verification
            grid, f, wiener, m = lab.grid, lab.distribution, lab.wiener, lab.m
            budget = lab.settings.flop_budget
            times = np.linspace(0.0, block.T, block.steps + 1)
            U, V = mode_potentials(grid, times, block.modes, block.amplitude)

            fourier = Q2_fourier(U, V, lab.lattice_kernel, grid, budget)
            split = J1_fourier(U, V, lab.lattice_kernel, grid, budget) + J2_fourier(
                U, V, lab.lattice_kernel, grid, budget
            )
            ensemble = Q2_ensemble(U, V, f, grid, wiener, m)
            reference = max(_l2(split.values), 1e-300)
            route_gap = _l2(fourier.values - split.values) / reference
            mc_ratio = _l2(ensemble.values - split.values) / max(_l2(ensemble.scale), 1e-300)

            constant = SpaceTimePotential.from_time_profile(
                grid, times, lambda t: block.amplitude * (1.0 - 0.5 * t)
            )
            flat_fourier = Q2_fourier(constant, constant, lab.lattice_kernel, grid, budget)
            flat_ensemble = Q2_ensemble(constant, constant, f, grid, wiener, m)
            cancellation = linear_cancellation_diag(constant, f, grid, wiener, m)

            rows = zip(
                times,
                _frame_norms(fourier.values),
                _frame_norms(split.values),
                _frame_norms(ensemble.values),
                _frame_norms(ensemble.scale),
            )
            writer.write_csv("q2_series.csv", ["t", "fourier", "j1_plus_j2", "ensemble", "mc_scale"], rows)
            report = {
                "route_gap": route_gap,
                "mc_ratio": mc_ratio,
                "flat_fourier_sup": float(np.max(np.abs(flat_fourier.values))),
                "flat_ensemble_sup": float(np.max(np.abs(flat_ensemble.values))),
                "flat_ensemble_scale": float(np.max(flat_ensemble.scale)),
                "linear_cancellation": cancellation.model_dump(),
            }
            report["passed"] = mc_ratio <= 5.0 and report["flat_ensemble_sup"] <= 5.0 * max(
                report["flat_ensemble_scale"], 1e-300
            )
            writer.write_json("q2_verify.json", report)
            logger.info(f"✅ Q2 routes agree to {route_gap:.3e}; ensemble within {mc_ratio:.2f} MC scales")
            return {k: v for k, v in report.items() if k != "linear_cancellation"}
        except HartreeError as e:
            logger.error(f"Error in q2-verify: {e}")
            raise

    def handle_kernel_bound(self, writer: RunWriter) -> Dict[str, Any]:
        """Handler for kernel-bound."""
        try:
            lab = self.lab
            block = lab.config.verification
            dim = lab.config.grid.dim
            if len(block.eta) < dim or len(block.eta2) < dim:
                raise ValidationFailure(f"eta and eta2 need {dim} components")
            eta = np.asarray(block.eta[:dim], dtype=float)
            eta2 = np.asarray(block.eta2[:dim], dtype=float)

            samples = [kernel_K_norms(lam * eta, eta2, lab.kernel, block.p) for lam in block.lambdas]
            rows = [
                (lam, s.norm_sq, s.bound, s.norm_sq / s.bound, s.det)
                for lam, s in zip(block.lambdas, samples)
            ]
            writer.write_csv("kernel_bound.csv", ["lambda", "norm_sq", "bound", "ratio", "det"], rows)

            slope = None
            if len(block.lambdas) >= 2:
                slope = float(
                    np.polyfit(np.log(block.lambdas), np.log([s.norm_sq for s in samples]), 1)[0]
                )
            within = all(s.norm_sq <= BOUND_SAFETY * s.bound for s in samples)
            report = {
                "p": block.p,
                "slope": slope,
                "slope_ok": slope is not None and abs(slope + 1.0) <= 0.1,
                "within_bound": within,
                "C_p": samples[0].C1 if block.p == 1 else samples[0].C2,
                "samples": [s.to_row() for s in samples],
            }
            writer.write_json("kernel_bound.json", report)
            logger.info(f"✅ Kernel norms: slope {slope}, within bound {within}")
            return {k: v for k, v in report.items() if k != "samples"}
        except HartreeError as e:
            logger.error(f"Error in kernel-bound: {e}")
            raise

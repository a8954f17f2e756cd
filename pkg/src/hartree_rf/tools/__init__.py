from .diagnostics import DiagnosticsTools
from .equilibrium import EquilibriumTools
from .evolution import EvolutionTools
from .verification import VerificationTools

__all__ = ["DiagnosticsTools", "EquilibriumTools", "EvolutionTools", "VerificationTools"]

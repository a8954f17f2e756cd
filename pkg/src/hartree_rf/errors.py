"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class HartreeError(Exception):
    """Base class for all lab errors."""

    exit_code = 3


class ConfigError(HartreeError):
    """Missing, unreadable or schema-invalid configuration."""

    exit_code = 4


class ValidationFailure(HartreeError):
    """Inputs violate a hypothesis or a discretization requirement."""

    exit_code = 2


class NumericalError(HartreeError):
    """A computation failed or produced unusable values."""

    exit_code = 3


class HypothesisFailure(ValidationFailure):
    pass


class NonIntegrable(ValidationFailure):
    pass


class NyquistUnderresolved(ValidationFailure):
    pass


class OffLatticeFrequency(ValidationFailure):
    pass


class GridMismatch(ValidationFailure):
    pass


class BoxGuardViolated(ValidationFailure):
    pass


class ComplexityGuard(ValidationFailure):
    pass


class CollinearPair(ValidationFailure):
    pass


class KernelRangeTooShort(ValidationFailure):
    """h is tabulated on a shorter range than the arguments of a lattice sum."""


class CutoffTooLarge(ValidationFailure):
    pass


class InadmissibleExponents(ValidationFailure):
    pass


class QuadratureFailure(NumericalError):
    pass


class ResonantSymbol(NumericalError):
    pass


class NaNDetected(NumericalError):
    pass


class NoContraction(NumericalError):
    """Raised with the last state attached so callers can still report it."""

    def __init__(self, message: str, state: object = None):
        super().__init__(message)
        self.state = state


class NotStabilized(NumericalError):
    pass


class SVDFailure(NumericalError):
    pass

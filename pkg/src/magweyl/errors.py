"""Exception hierarchy shared by all modules."""


class MagweylError(Exception):
    """Base class; ``field`` names the offending parameter when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ConfigError(MagweylError):
    pass


class DomainError(MagweylError):
    pass


class DerivativeError(MagweylError):
    pass


class RankDeficientError(MagweylError):
    pass


class PairingError(MagweylError):
    pass


class FieldError(MagweylError):
    """Scenario data incompatible with the requested operation."""


class FluxQuantizationError(MagweylError):
    pass


class AliasingError(MagweylError):
    pass


class FactorizationError(MagweylError):
    pass


class ResolutionError(MagweylError):
    """Lattice too coarse to separate the clusters being measured."""


class BudgetError(MagweylError):
    """A size guard (enumeration, quadrature, dense eigensolve, lattice) was hit."""

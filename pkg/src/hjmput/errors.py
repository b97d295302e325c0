"""Exception types shared across the package."""


class HjmPutError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HjmPutError):
    """A space/model/run configuration violates its invariants."""


class InvalidCurveError(HjmPutError):
    """A forward curve contains non-finite values or sits on a bad grid."""


class BasisConstructionError(HjmPutError):
    """Gram-Schmidt orthonormalization failed (numerical rank deficiency)."""


class ContractError(HjmPutError):
    """Option contract parameters are out of range (e.g. strike outside (0,1))."""


class CapacityError(HjmPutError):
    """A simulation request exceeds the configured resource limits."""


class UnsupportedDimensionError(HjmPutError):
    """PDE solves are only available for state dimension 1 or 2."""


class SolverError(HjmPutError):
    """Projected SOR failed to converge within the iteration cap."""


class ExtrapolationError(HjmPutError):
    """A state coordinate fell outside the PDE domain; values are never clamped."""

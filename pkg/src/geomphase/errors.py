"""Exception and warning types.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""


class GeomPhaseError(Exception):
    exit_code = 1


class ConfigError(GeomPhaseError):
    exit_code = 2


class NumericError(GeomPhaseError):
    """A computation produced values that cannot be trusted."""

    exit_code = 3


class NumericRangeError(NumericError):
    pass


class ConsistencyError(NumericError):
    """Phase bookkeeping does not add up (alpha != delta + gamma)."""


class IntegratorFault(NumericError):
    pass


class TrackingLostError(NumericError):
    pass


class SamplingError(NumericError):
    pass


class PreconditionError(GeomPhaseError, ValueError):
    exit_code = 4


class DomainError(PreconditionError):
    pass


class HermiticityError(PreconditionError):
    pass


class DegeneracyError(PreconditionError):
    def __init__(self, message, levels=None):
        super().__init__(message)
        self.levels = levels


class StabilityError(PreconditionError):
    pass


class PathTooCoarseError(PreconditionError):
    pass


class GeometryError(PreconditionError):
    pass


class UnsupportedOrderError(PreconditionError):
    pass


class NoCouplingError(PreconditionError):
    pass


class ConvergenceWarning(UserWarning):
    pass


class AccuracyWarning(UserWarning):
    pass


class AdiabaticityWarning(UserWarning):
    pass

"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick an exit code.
"""


class TomoError(Exception):
    category = "usage"
    exit_code = 2


class UsageError(TomoError):
    pass


class FormatError(TomoError):
    category = "format"
    exit_code = 3


class ShapeError(FormatError):
    pass


class InvariantError(TomoError):
    category = "invariant"
    exit_code = 4


class NumericalError(TomoError):
    category = "numerical-stability"
    exit_code = 5


# tomo-core
class GridError(UsageError):
    pass


class GridMismatch(UsageError):
    pass


class DegenerateTomogram(InvariantError):
    pass


class MarginalAngleDependence(InvariantError):
    pass


# transforms
class SupportOverflow(NumericalError):
    pass


class FilterInstability(NumericalError):
    pass


class TraceCollapse(NumericalError):
    pass


class NormLoss(NumericalError):
    pass


# states
class UnsupportedKind(UsageError):
    pass


# hybrid
class WeightError(UsageError):
    pass


class DomainError(UsageError):
    pass


# evolution
class DegreeError(UsageError):
    pass


class StabilityError(NumericalError):
    pass


class CFLViolation(NumericalError):
    pass


class GridAliasing(NumericalError):
    pass


class InterpolationWarning(UserWarning):
    pass

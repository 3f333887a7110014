"""Exception types raised across the package."""


class LocalizationError(Exception):
    """Base class for every error raised by adrigidity."""


class CollocationError(LocalizationError):
    pass


class DegenerateNeighborhoodError(LocalizationError):
    """A star is too degenerate (e.g. colinear) to yield a displacement constraint."""


class AmbiguousNullSpaceError(DegenerateNeighborhoodError):
    """The stacked star matrix has more than one null direction."""


class InconsistentMeasurementError(LocalizationError):
    pass


class IncompleteStarError(LocalizationError):
    """A measurement needed to reconstruct a star is missing."""


class AssumptionViolationError(LocalizationError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class InvalidConstraintError(LocalizationError):
    pass


class InternalConsistencyError(LocalizationError):
    pass


class NotLocalizableError(LocalizationError):
    """D_ff is singular; ``motions`` holds an orthonormal basis of its null space."""

    def __init__(self, message, motions=None, lambda_min=None):
        super().__init__(message)
        self.motions = motions
        self.lambda_min = lambda_min


class BoundInapplicableError(LocalizationError):
    pass


class StaleMailboxError(LocalizationError):
    pass


class DivergenceError(LocalizationError):
    def __init__(self, message, suggested_step=None):
        super().__init__(message)
        self.suggested_step = suggested_step


class ScenarioError(LocalizationError):
    """Scenario file failed to parse or validate."""

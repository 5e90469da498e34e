"""Exception types shared across the package."""


class FolirecError(Exception):
    """Base class for all folirec errors."""


class InvalidArgumentError(FolirecError, ValueError):
    """An input violates a documented precondition."""


class DegenerateInputError(InvalidArgumentError):
    """Input is structurally degenerate (empty object, rank-deficient spec, ...)."""


class OutOfDomainError(FolirecError):
    """A queried point or path waypoint leaves the chart."""


class IllPosedError(FolirecError):
    """A solve was attempted on a rank-deficient system.

    Carries the rank report so callers can inspect what failed.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotFoundError(FolirecError):
    """Root search exhausted all starts without an acceptable root."""


class DegenerateFrameError(FolirecError):
    """Frame condition number exceeded the bound at some node."""

    def __init__(self, message, node=None, location=None, condition=None):
        super().__init__(message)
        self.node = node
        self.location = location
        self.condition = condition


class NoDivisionError(FolirecError):
    """Quasigroup division attempted with a singular transported factor."""


class FitDivergedError(FolirecError):
    """Connection fit loss exploded instead of descending."""


class ConfigError(FolirecError):
    """Experiment config failed validation. Collects every error found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))

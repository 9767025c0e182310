"""Exception hierarchy shared across the package."""


class DRASError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(DRASError, ValueError):
    """Malformed trace input. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class EmptyTraceError(DRASError, ValueError):
    pass


class ConfigurationError(DRASError, ValueError):
    pass


class ContractViolation(DRASError, RuntimeError):
    """A caller broke an interface contract (bad action, stale cache, ...)."""


class ShapeError(DRASError, ValueError):
    pass


class NumericError(DRASError, ArithmeticError):
    pass


class FormatError(DRASError, ValueError):
    """Unreadable or inconsistent model file."""


class SimulationError(DRASError, RuntimeError):
    """Raised when a run cannot make progress or fails mid-episode."""

    def __init__(self, message, episode=None):
        self.episode = episode
        if episode is not None:
            message = f"episode {episode}: {message}"
        super().__init__(message)

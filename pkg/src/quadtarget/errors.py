"""Exception types raised across the package."""


class QuadTargetError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QuadTargetError, ValueError):
    """Invalid scenario, grid or controller configuration.

    ``source``, ``line`` and ``key`` are filled in when the error comes from a
    configuration file so that the CLI can point at the offending entry.
    """

    def __init__(self, message, *, source=None, line=None, key=None):
        self.source = source
        self.line = line
        self.key = key
        super().__init__(message)

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.source is not None:
            where.append(str(self.source))
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.key is not None:
            where.append(f"key '{self.key}'")
        return f"{': '.join(where)}: {msg}" if where else msg


class SynthesisError(QuadTargetError, ValueError):
    """Riccati synthesis precondition violated (weights, stabilizability)."""


class SaturationError(QuadTargetError, ValueError):
    """Requested acceleration cannot be produced by thrust plus tilt."""


class DivergenceError(QuadTargetError, RuntimeError):
    """Plant state became non-finite during integration."""

    def __init__(self, message, time):
        self.time = time
        super().__init__(f"{message} (t={time:.4f} s)")


class MetricsError(QuadTargetError, ValueError):
    """Metrics requested over an empty record window."""

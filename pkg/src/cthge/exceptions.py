"""Exception hierarchy shared by all modules."""


class CTHGEError(Exception):
    """Base class for all package errors."""


class ConfigError(CTHGEError, ValueError):
    """Invalid or inconsistent configuration value."""


class GraphParseError(CTHGEError, ValueError):
    """A graph file line could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class GraphValidationError(CTHGEError, ValueError):
    """The graph violates a structural invariant."""


class DimensionError(CTHGEError, ValueError):
    pass


class NumericError(CTHGEError, ValueError):
    """Non-finite or out-of-domain numeric input."""


class UndefinedMetricError(CTHGEError, ValueError):
    """A metric is undefined on the given input (e.g. no cross-type edges)."""


class DomainError(CTHGEError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class DivergenceError(CTHGEError, RuntimeError):
    def __init__(self, epoch, message="loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")


class PruningError(CTHGEError, RuntimeError):
    """Pruning would leave no cross-type edges."""


class SearchError(CTHGEError, RuntimeError):
    """No candidate in a hyper-parameter search was feasible."""

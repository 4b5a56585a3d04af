"""Exception types shared across the toolkit."""


class InvalidArgument(ValueError):
    pass


class InvalidState(RuntimeError):
    pass


class ConvergenceFailure(RuntimeError):
    """A nonlinear or linear solve did not converge.

    ``history`` holds the residual norms seen before giving up.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NumericalFailure(RuntimeError):
    pass


class BinarizationFailure(RuntimeError):
    pass


class InvalidGeometry(RuntimeError):
    """Raised when a pattern cannot carry flow from inlet to outlet."""

    def __init__(self, message, orphans=None):
        super().__init__(message)
        self.orphans = list(orphans or [])


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where += f" [{key}]"
        if line is not None:
            where += f" (line {line})"
        super().__init__(message + where)
        self.key = key
        self.line = line


class StageInputError(RuntimeError):
    pass

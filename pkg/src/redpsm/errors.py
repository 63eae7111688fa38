"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input failed a shape, range or finiteness check."""


class SolverDivergence(RuntimeError):
    """An iterate became non-finite; ``diagnostics`` holds the last good rows."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics

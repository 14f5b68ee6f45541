"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad user-supplied configuration: unknown key, wrong type, impossible value."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value or diverged beyond recovery.

    Carries enough context (op kind, step index, task id) to locate the
    offending computation.
    """

    def __init__(self, message: str, *, op_kind: str | None = None):
        super().__init__(message)
        self.op_kind = op_kind

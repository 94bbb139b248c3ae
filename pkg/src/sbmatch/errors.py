"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(RuntimeError):
    """Computation produced non-finite or divergent values."""

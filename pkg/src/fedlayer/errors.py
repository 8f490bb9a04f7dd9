"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or inconsistent dimensions."""


class NumericalError(ArithmeticError):
    """A numerical routine produced non-finite values or failed to converge."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}

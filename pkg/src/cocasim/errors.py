class ConfigError(ValueError):
    """Raised for malformed scenarios, unknown keys or inconsistent dimensions."""

    def __init__(self, message, keys=None):
        super().__init__(message)
        self.keys = list(keys or [])


class ValidationError(ValueError):
    """Raised when an operation receives out-of-domain arguments."""

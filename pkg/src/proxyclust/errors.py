"""Exception types shared across the package."""


class BundleError(ValueError):
    """A bundle directory or manifest violates the format contract."""

    def __init__(self, message: str, *, path=None, field=None):
        detail = message
        if path is not None:
            detail = f"{detail} [file: {path}]"
        if field is not None:
            detail = f"{detail} [field: {field}]"
        super().__init__(detail)
        self.path = path
        self.field = field


class DegenerateRowError(ValueError):
    """A zero-norm row turned up where a direction is required."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (row {index})")
        self.index = index


class ConfigError(ValueError):
    """Invalid configuration or CLI argument value."""

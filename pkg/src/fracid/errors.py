"""Exception types shared across the package."""


class SolverError(RuntimeError):
    """A linear solve failed or produced non-finite values."""


class ConfigError(ValueError):
    """An experiment configuration is missing, malformed, or inconsistent."""

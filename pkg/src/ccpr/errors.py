"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class NumericError(RuntimeError):
    """A numerical search failed (no bracket, no convergence)."""


class ConfigError(ValueError):
    """An experiment configuration is malformed."""

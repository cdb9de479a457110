class InvalidInputError(ValueError):
    """Raised on malformed numerical input (non-finite scores, shape mismatch)."""


class ConfigError(ValueError):
    """Raised when an experiment or algorithm configuration is inconsistent."""


class InstanceError(ValueError):
    """Raised when an environment instance violates its invariants."""

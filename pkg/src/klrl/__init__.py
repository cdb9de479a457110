"""KL-regularized online learning: optimistic contextual bandits and
least-squares value iteration with exact regret accounting."""

from klrl.errors import ConfigError, InstanceError, InvalidInputError

__version__ = "0.1.0"

__all__ = ["ConfigError", "InstanceError", "InvalidInputError", "__version__"]

"""Error taxonomy shared across the package.

Two failure classes: bad configuration (shapes/hyperparameters that can
never work) and bad runtime input (data that violates an op's precondition).
"""


class ConfigError(ValueError):
    """Raised when a model/training configuration is internally inconsistent."""


class InputError(ValueError):
    """Raised when runtime data violates an operation's precondition."""

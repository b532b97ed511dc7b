"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An invalid hyperparameter or configuration value."""


class ContractError(ValueError):
    """A call violated an operation's preconditions (shape, range, binarity)."""


class DatasetError(ValueError):
    """A dataset file could not be parsed."""


class NonFiniteError(ArithmeticError):
    """A forward computation produced NaN or Inf."""

"""Exception types shared across the package."""


class StochInterpError(Exception):
    """Base class for library errors."""


class ConfigError(StochInterpError, ValueError):
    """Invalid user configuration (maps to CLI exit code 2)."""


class NumericalError(StochInterpError, ArithmeticError):
    """Numerical failure (maps to CLI exit code 3)."""


class InvalidCombination(ConfigError):
    pass


class EmptySource(ConfigError):
    pass


class MissingScore(ConfigError):
    pass


class SingularGamma(ConfigError):
    pass


class SingularCovariance(NumericalError):
    pass


class IllConditioned(NumericalError):
    pass


class StepUnderflow(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class DivideByZeroBeta(NumericalError):
    pass


class DegenerateWeight(NumericalError):
    pass


class ZeroDensity(NumericalError):
    pass

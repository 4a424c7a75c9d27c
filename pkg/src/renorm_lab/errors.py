"""Exception hierarchy.  Each family maps onto a CLI exit code."""


class RenormLabError(Exception):
    exit_code = 3


class ConfigError(RenormLabError):
    exit_code = 2


class CheckFailure(RenormLabError):
    exit_code = 1


class NumericalFailure(RenormLabError):
    exit_code = 3


# kernels
class DimensionTooSmall(ConfigError):
    pass


class SingularOperator(ConfigError):
    pass


class InsufficientData(ConfigError):
    pass


class ParameterViolation(ConfigError):
    pass


class QuadratureFailure(NumericalFailure):
    pass


class TailTooLarge(NumericalFailure):
    pass


class TruncationWarning(UserWarning):
    pass


# graphcalc
class GraphIncomplete(ConfigError):
    pass


class OrderOutOfRange(ConfigError):
    pass


class LengthMismatch(ConfigError):
    pass


class TableMismatch(CheckFailure):
    pass


class OffsetFailure(CheckFailure):
    pass


# opalgebra
class TooLarge(ConfigError):
    pass


class DegreeOverflow(ConfigError):
    pass


class RearrangementFailure(CheckFailure):
    pass


# probtools
class TooManyVariables(ConfigError):
    pass


# finitevol
class NotPositiveDefinite(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    pass


class NeumannDivergence(NumericalFailure):
    pass

"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`VbidError`.
The three families map onto the command line exit codes: configuration and
usage problems exit with 1, data problems with 2 and numerical failures
with 3.
"""


class VbidError(Exception):
    exit_code = 2


class ConfigError(VbidError, ValueError):
    exit_code = 1


class InvalidConfig(ConfigError):
    pass


class NonPositiveTheta(ConfigError):
    pass


class TooManyBinaries(ConfigError):
    pass


class DataError(VbidError, ValueError):
    exit_code = 2


class ParseError(DataError):
    pass


class MissingCell(DataError):
    pass


class NoReferenceNode(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class FeatureMismatch(DataError):
    pass


class OutOfRange(DataError):
    pass


class OutOfDomain(DataError):
    pass


class EmptyDomain(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyLosses(DataError):
    pass


class TooFewPoints(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class InvalidPwl(DataError):
    pass


class InfeasibleBounds(DataError):
    pass


class NumericalError(VbidError, ArithmeticError):
    exit_code = 3


class NonFiniteLoss(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class Infeasible(NumericalError):
    pass

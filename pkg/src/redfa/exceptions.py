"""Exception hierarchy. CLI exit codes are attached to the classes."""


class RedfaError(Exception):
    exit_code = 1


class UsageError(RedfaError, ValueError):
    exit_code = 2


class ConfigurationError(UsageError):
    pass


class DataError(RedfaError, ValueError):
    exit_code = 3


class InvalidInputError(DataError):
    pass


class NumericError(RedfaError, ArithmeticError):
    exit_code = 4

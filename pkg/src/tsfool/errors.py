"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TsfoolError(Exception):
    exit_code = 1


class ConfigError(TsfoolError, ValueError):
    exit_code = 2


class DataError(TsfoolError, ValueError):
    exit_code = 3


class DatasetFormatError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DimensionError(DataError):
    pass


class NumericalError(TsfoolError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericalError):
    pass


class UndefinedMetricError(NumericalError):
    pass

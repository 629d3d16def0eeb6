"""Exception hierarchy. Each family maps to one CLI exit code."""


class DpgError(Exception):
    exit_code = 1


class ConfigError(DpgError):
    exit_code = 2


class ParameterError(ConfigError, ValueError):
    pass


class DataError(DpgError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class LatticeError(DataError):
    pass


class ConflictError(DataError):
    pass


class RangeError(DataError, IndexError):
    pass


class UnusableAssetError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class TapeError(DpgError):
    pass


class NumericError(DpgError, ArithmeticError):
    pass


class TrainingDiverged(NumericError):
    exit_code = 4

    def __init__(self, step, message="training diverged"):
        self.step = step
        super().__init__(f"{message} at step {step}")


class SelectionError(DpgError):
    exit_code = 4


class ContractViolation(DpgError):
    exit_code = 5

    def __init__(self, period, message):
        self.period = period
        super().__init__(f"period {period}: {message}")


class ComparisonError(DataError):
    pass

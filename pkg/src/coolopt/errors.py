"""Exception hierarchy.

``DataError`` subclasses signal bad input data (CLI exit code 2);
``ConfigError`` signals an invalid configuration (exit code 1).
"""


class CoolOptError(Exception):
    """Base class for all package errors."""


class ConfigError(CoolOptError):
    pass


class DataError(CoolOptError):
    pass


class MissingColumn(DataError):
    def __init__(self, name):
        super().__init__(f"missing column {name!r}")
        self.name = name


class EmptyFile(DataError):
    pass


class RowParseError(DataError):
    def __init__(self, line, column, reason=""):
        msg = f"line {line}: cannot parse column {column!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.line = line
        self.column = column
        self.reason = reason


class AllRowsInvalid(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class DegenerateData(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NonFiniteTarget(DataError):
    pass


class FeatureCountMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NonPositiveItPower(DataError):
    pass


class TariffGap(ConfigError):
    pass


class TimestampMismatch(DataError):
    pass


class InvalidConfig(ConfigError):
    pass


class ModelFormatError(DataError):
    pass

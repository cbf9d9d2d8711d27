"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MavoidError(Exception):
    exit_code = 1


class UsageError(MavoidError):
    exit_code = 2


class ConfigurationError(UsageError):
    pass


class DataError(MavoidError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SchemaError(DataError):
    pass


class FormatError(DataError):
    pass


class MissingColumnError(SchemaError):
    pass


class ContractError(MavoidError, ValueError):
    """A function was called with inputs violating its preconditions."""


class UndefinedMetricError(ContractError):
    pass


class UnstableMetricError(MavoidError):
    pass


class SpecificationError(ConfigurationError):
    pass


class PropertyViolation(MavoidError):
    exit_code = 4

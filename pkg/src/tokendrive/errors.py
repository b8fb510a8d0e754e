"""Exception types shared across the package."""


class TokenDriveError(Exception):
    """Base class for package errors."""


class DimensionError(TokenDriveError, ValueError):
    pass


class EmptyInputError(TokenDriveError, ValueError):
    pass


class ParameterError(TokenDriveError, ValueError):
    pass


class ConfigError(TokenDriveError, ValueError):
    pass


class ConsistencyError(TokenDriveError, ValueError):
    pass


class NumericError(TokenDriveError, ArithmeticError):
    pass


class CheckpointError(TokenDriveError, ValueError):
    pass

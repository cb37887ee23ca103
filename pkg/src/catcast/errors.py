"""Exception hierarchy shared by every catcast module."""


class CatcastError(Exception):
    """Base class for all errors raised by catcast."""


class SchemaError(CatcastError):
    pass


class FormatError(CatcastError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DataError(CatcastError):
    pass


class EncodeError(CatcastError):
    pass


class ConfigError(CatcastError):
    pass


class UsageError(CatcastError):
    pass

"""Entity-embedding neural models and baselines for purely categorical tabular data."""

__version__ = "0.1.0"

from catcast.errors import (  # noqa: F401
    CatcastError,
    ConfigError,
    DataError,
    EncodeError,
    FormatError,
    SchemaError,
    UsageError,
)

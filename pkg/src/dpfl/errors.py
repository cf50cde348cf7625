class DpflError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(DpflError, ValueError):
    """Inconsistent dimensions, invalid settings or malformed config files."""


class PartitionError(DpflError):
    """A data partition or split left some client or split empty."""


class ModelStreamError(DpflError):
    """A requested model was not delivered."""

"""Shared exception types."""


class MunlabError(Exception):
    """Base class for package errors."""


class DimensionError(MunlabError):
    """An array argument has the wrong shape for the operation."""


class TrainingDivergenceError(MunlabError):
    """A gradient or parameter became non-finite during training."""


class ModelDivergenceError(MunlabError):
    """A learned-model prediction became non-finite."""


class ConfigurationError(MunlabError):
    """A configuration value is missing, malformed, or out of range."""


class EmptySourceError(MunlabError):
    """A sample was requested from an empty buffer or candidate set."""


class ContractViolationError(MunlabError):
    """An operation was called outside its legal protocol (e.g. stepping a finished episode)."""

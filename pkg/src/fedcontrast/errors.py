"""Exception taxonomy shared across the package.

Every class maps to one CLI exit code (see :mod:`fedcontrast.cli`), so new
failure modes should subclass one of the categories below instead of raising
bare ``ValueError``.
"""


class FedContrastError(Exception):
    """Base class for all package errors."""


class DataError(FedContrastError):
    """Problems with dataset files or data partitioning."""


class IngestionError(DataError):
    """A dataset file is missing or unreadable; the message names the file."""


class FormatError(DataError):
    """A dataset file exists but its contents are not the canonical format."""


class SplitError(DataError):
    """The requested labeled/unlabeled/client partition is infeasible."""


class ModelError(FedContrastError):
    """Problems with parameter sets or network wiring."""


class DimensionError(ModelError):
    """An input does not match the shape a component expects."""


class ParameterError(ModelError):
    """Parameter sets are incompatible: bad roles, overlapping or
    mismatched entries."""


class ConfigError(FedContrastError):
    """Invalid experiment configuration or config-file syntax."""


class TrainingAbort(FedContrastError):
    """A training session hit a non-recoverable numeric failure."""


class NonFiniteLossError(TrainingAbort):
    """Loss became NaN/inf; carries the step index and loss components."""

    def __init__(self, message, step=None, components=None):
        super().__init__(message)
        self.step = step
        self.components = dict(components) if components else {}

"""Exception taxonomy shared across the package.

Configuration and input-validation failures map to CLI exit code 1,
numeric/runtime failures to exit code 2.
"""


class SlidekitError(Exception):
    """Base class for all package errors."""


class ConfigError(SlidekitError):
    """Invalid configuration or precondition (bad spec, empty split, ...)."""


class ShapeError(SlidekitError):
    """Dimension mismatch between arrays; message names both shapes."""


class EmptyBagError(SlidekitError):
    """A slide bag with zero patches was passed to an aggregator."""


class StateError(SlidekitError):
    """Layer backward called without a matching recorded forward."""


class FormatError(SlidekitError):
    """Malformed binary or text container; message carries the byte offset."""


class ManifestError(ConfigError):
    """Manifest validation failure with a machine-readable error code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class UndefinedMetricError(SlidekitError):
    """Metric has no defined value on the given sample (e.g. single-class AUC)."""


class DegenerateDataError(SlidekitError):
    """Bootstrap resampling could not produce enough defined metric values."""


class NumericError(SlidekitError):
    """Non-finite gradients or diverging loss during training."""

"""Exception types shared across the package."""


class DrnetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(DrnetError, ValueError):
    """Invalid parameter combination (bad shapes, dims, flag values)."""


class FormatError(DrnetError, ValueError):
    """Malformed or corrupted file; the message names the failing field."""


class SamplingError(DrnetError, RuntimeError):
    """A sampler's preconditions are not met by the dataset."""


class TrainingDiverged(DrnetError, RuntimeError):
    """A loss became non-finite; the message names the term and step."""

"""Video factorization into time-invariant content codes and time-varying
pose codes, trained with an adversarial pairing loss; long-range prediction
runs a recurrent forecaster over pose codes with the content code fixed."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DrnetError, FormatError, SamplingError,
                     TrainingDiverged)

__all__ = [
    "ConfigurationError",
    "DrnetError",
    "FormatError",
    "SamplingError",
    "TrainingDiverged",
    "__version__",
]

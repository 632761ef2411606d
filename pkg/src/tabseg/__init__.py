"""CNN-Transformer volumetric tissue segmentation on synthetic multi-site phantoms."""

from .errors import (ConfigurationError, DataError, FormatError, NumericError, TabsError,
                     UndefinedMetricError, UsageError)

__version__ = "0.1.0"

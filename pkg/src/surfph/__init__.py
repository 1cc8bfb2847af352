"""surfph: surface-pH dynamics of a CO2-fed spherical cell and sparse
Bayesian recovery of membrane transport parameters from quantized pH
traces.

The public API is re-exported here; see the module docstrings of
``forward``, ``measure``, ``sparse``, ``dictionary``, and ``estimate``
for the science and the algorithms.
"""

__version__ = "0.1.0"

from .config import Config, config_hash, load_config
from .errors import (BundleError, ConfigurationError, EstimationError,
                     IntegrationError, SurfphError)
from .forward import PhysicalParams, SimResult, map_params, simulate
from .measure import make_datum, quantize

__all__ = [
    "__version__",
    "Config", "config_hash", "load_config",
    "SurfphError", "ConfigurationError", "IntegrationError", "BundleError",
    "EstimationError",
    "PhysicalParams", "SimResult", "map_params", "simulate",
    "make_datum", "quantize",
]

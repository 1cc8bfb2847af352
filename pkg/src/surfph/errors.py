"""Exception hierarchy for the surfph package.

Every error raised deliberately by this package derives from SurfphError,
so callers can catch one type at the boundary.  The four concrete classes
map onto the distinct failure modes the command line tool reports:
bad configuration, a failed ODE integration, a damaged or mismatched
dictionary bundle, and an estimation that could not produce a usable
parameter vector.
"""


class SurfphError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SurfphError):
    """Invalid, inconsistent, or out-of-domain configuration or arguments."""


class IntegrationError(SurfphError):
    """The ODE solver failed, or its output violates a physical sanity bound."""


class BundleError(SurfphError):
    """A dictionary bundle is missing, corrupt, or built for another config."""


class EstimationError(SurfphError):
    """The estimation pipeline could not produce a parameter estimate."""


class InternalError(SurfphError):
    """An internal consistency check failed; this indicates a bug."""

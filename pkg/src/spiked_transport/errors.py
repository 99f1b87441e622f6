"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters for a sampler, experiment or option set."""


class DimensionMismatchError(ValueError):
    """Two objects that must share an ambient dimension do not."""


class RetractionError(ArithmeticError):
    """QR retraction hit a numerically singular matrix."""


class NetSizeError(ValueError):
    """Requested epsilon-net would exceed the configured size cap."""


class ConstructionError(ValueError):
    """A moment-matched construction received inputs that break its guarantees."""


class QuadratureError(ArithmeticError):
    """Numerical integration did not converge or the integral diverges."""


class CertificationError(ArithmeticError):
    """A transport plan failed its primal feasibility or duality-gap check."""


class OutputLockedError(RuntimeError):
    """Another run holds the lock on the requested output directory."""

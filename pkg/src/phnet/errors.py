"""Exception types shared across the package."""


class PhnetError(Exception):
    """Base class for all phnet errors."""


class ShapeError(PhnetError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GeometryError(PhnetError, ValueError):
    """Convolution/pooling geometry produces an empty or invalid output."""


class AlgebraDimensionError(PhnetError, ValueError):
    """Channel counts are not divisible by the hypercomplex dimension n."""


class TapeError(PhnetError, RuntimeError):
    """Autograd contract violation (e.g. backward on a non-scalar)."""


class MetricError(PhnetError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class StratificationError(PhnetError, ValueError):
    """A class has too few records to populate every split."""


class ConfigError(PhnetError, ValueError):
    """Invalid or contradictory run/synthesis configuration."""


class InputError(PhnetError, ValueError):
    """Malformed user-supplied data (images, labels, manifests)."""

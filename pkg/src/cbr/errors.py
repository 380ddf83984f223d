"""Exception types shared across the package."""


class CBRError(Exception):
    """Base class for all library errors."""


class CoordinateSystemError(CBRError):
    """Two intervals from different coordinate systems were combined."""


class FeatureFormatError(CBRError):
    """A feature file is malformed (magic, version, shape, or size)."""


class FeatureDataError(CBRError):
    """A feature payload contains non-finite values."""


class ClipBoundsError(CBRError):
    """A clip reaches outside the video it is pooled from."""


class DegenerateIntervalError(CBRError):
    """Decoding produced an empty, inverted, or non-finite interval."""


class SamplingError(CBRError):
    """A minibatch stratum has no samples to draw from."""


class ShapeError(CBRError):
    """Input dimensions do not match the model."""


class MissingTargetError(CBRError):
    """A positive sample arrived without finite regression targets."""


class DivergenceError(CBRError):
    """Training produced non-finite gradients."""


class UndefinedMetricError(CBRError):
    """A metric was requested over an empty ground-truth set."""


class GenerationError(CBRError):
    """Synthetic data generation could not satisfy its constraints."""


class ConfigError(CBRError):
    """Invalid or inconsistent experiment configuration."""

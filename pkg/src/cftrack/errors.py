"""Exception types shared across the toolkit."""


class ShapeMismatch(ValueError):
    """Operands have incompatible dimensions."""


class ImaginaryResidue(ArithmeticError):
    """Inverse transform of a supposedly conjugate-symmetric spectrum left a
    non-negligible imaginary part."""


class SingularBin(ZeroDivisionError):
    """Unregularized filter estimation hit a zero-magnitude frequency bin."""


class ZeroVector(ValueError):
    """Operation undefined for an all-zero vector."""


class DegenerateBox(ValueError):
    """Bounding box collapses below one pixel."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class FormatError(ValueError):
    """Malformed binary file (bad magic, version, or truncated payload)."""


class IndexOutOfRange(IndexError):
    """Stage index outside the model depth."""


class InsufficientDistinct(ValueError):
    """Not enough distinct samples to seed the requested cluster count."""


class InvalidChannelCount(ValueError):
    """Requested channel count exceeds what the feature map provides."""


class LengthMismatch(ValueError):
    """Paired sequences have different lengths."""


class MissingFrames(FormatError):
    """Frame files and ground-truth records do not line up."""

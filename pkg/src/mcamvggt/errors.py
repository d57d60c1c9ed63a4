"""Exception types raised across the package."""


class MCamError(Exception):
    """Base class for all package errors."""


class DegenerateRig(MCamError):
    """All rig cameras are co-located, so translations cannot be normalized."""


class InvalidQuaternion(MCamError):
    pass


class NoValidCameras(MCamError):
    """Every predicted rig translation is too small to form a scale ratio."""


class ShapeError(MCamError, ValueError):
    pass


class EmptyScene(MCamError):
    pass


class NoValidPixels(MCamError):
    pass


class LengthMismatch(MCamError, ValueError):
    pass


class NonFinite(MCamError, FloatingPointError):
    pass


class DegeneratePair(MCamError):
    pass


class MissingCheckpoint(MCamError, FileNotFoundError):
    pass


class FingerprintMismatch(MCamError):
    pass


class ConfigError(MCamError, ValueError):
    pass


class CorruptFile(MCamError, OSError):
    """A dataset or checkpoint file exists but cannot be parsed."""

"""Exception types raised across the package."""


class SplatFuseError(Exception):
    """Base class for all package errors."""


class BehindCamera(SplatFuseError, ValueError):
    pass


class DegenerateFrame(SplatFuseError, ValueError):
    pass


class MalformedFile(SplatFuseError, ValueError):
    pass


class EmptyScene(SplatFuseError, ValueError):
    pass


class NonFinite(SplatFuseError, ValueError):
    pass


class EmptyVoxel(SplatFuseError, ValueError):
    pass


class MixedVoxel(SplatFuseError, ValueError):
    pass


class VoxelSizeMismatch(SplatFuseError, ValueError):
    pass


class OutOfRange(SplatFuseError, ValueError):
    pass


class GridOverflow(SplatFuseError, ValueError):
    pass


class MaskShapeMismatch(SplatFuseError, ValueError):
    pass


class ShapeMismatch(SplatFuseError, ValueError):
    pass


class EmptyValidMask(SplatFuseError, ValueError):
    pass


class ConfigMismatch(SplatFuseError, ValueError):
    """Checkpoint or store header does not match the requested configuration."""


class InvariantViolation(SplatFuseError, RuntimeError):
    """An internal consistency check failed."""

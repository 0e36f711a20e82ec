"""Exception types raised across the package."""


class GeoregError(Exception):
    """Base class for all recoverable failures in this package."""


class AngleNearPi(GeoregError):
    """The SE(3) logarithm is ill-conditioned (rotation angle too close to pi)."""


class BehindCamera(GeoregError):
    pass


class NonPositiveDepth(GeoregError):
    pass


class BadDimensions(GeoregError):
    pass


class OutOfBounds(GeoregError):
    pass


class CameraUnderground(GeoregError):
    pass


class NoIntersection(GeoregError):
    pass


class InsufficientValidPixels(GeoregError):
    pass


class ConfigMismatch(GeoregError):
    pass


class SolveFailed(GeoregError):
    pass


class AllHypothesesInvalid(GeoregError):
    """No hypothesis survived refinement; the frame counts as a tracking loss."""


class UnknownFrame(GeoregError):
    pass


class LengthMismatch(GeoregError):
    pass

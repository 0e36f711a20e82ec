"""Three-level feature/uncertainty pyramid and bilinear sampling.

This is a deterministic stand-in for a learned extractor: the fine level is
the rendered appearance itself, coarser levels are Gaussian-blurred (sigma =
1 px) and 2x2 box-decimated, which keeps the half-pixel convention of
:func:`georeg.camera.to_level_pixel` exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .camera import PixelPoint
from .errors import BadDimensions, OutOfBounds

BLUR_SIGMA = 1.0
BLUR_TRUNCATE = 4.0


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray  # (H, W, C)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    values: np.ndarray  # (H, W), in (0, 1]


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """Levels ordered coarse (1/4) to fine (1)."""

    features: tuple
    uncertainties: tuple

    def __post_init__(self):
        if len(self.features) != 3 or len(self.uncertainties) != 3:
            raise ValueError("a pyramid has exactly three levels")

    def level(self, ell: int):
        return self.features[ell], self.uncertainties[ell]


def blur(image: np.ndarray) -> np.ndarray:
    sigma = (BLUR_SIGMA, BLUR_SIGMA) + (0,) * (image.ndim - 2)
    return gaussian_filter(image, sigma=sigma, mode="nearest", truncate=BLUR_TRUNCATE)


def decimate(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    return image.reshape(h // 2, 2, w // 2, 2, *image.shape[2:]).mean(axis=(1, 3))


def noise_variance(image: np.ndarray) -> np.ndarray:
    """Local variance of the high-pass residual, averaged over channels."""
    resid = image - blur(image)
    return blur((resid**2).mean(axis=-1))


def build_pyramid_from_image(image: np.ndarray, estimate_noise: bool = False) -> FeaturePyramid:
    h, w = image.shape[:2]
    if h % 4 or w % 4:
        raise BadDimensions(f"{w}x{h} is not divisible by 4")
    if estimate_noise:
        unc = 1.0 / (1.0 + noise_variance(image))
    else:
        unc = np.ones((h, w))
    feats = [image]
    uncs = [unc]
    for _ in range(2):
        feats.append(decimate(blur(feats[-1])))
        uncs.append(decimate(blur(uncs[-1])))
    return FeaturePyramid(
        features=tuple(FeatureMap(np.ascontiguousarray(f)) for f in reversed(feats)),
        uncertainties=tuple(UncertaintyMap(u) for u in reversed(uncs)),
    )


def build_pyramid(view, estimate_noise: bool = False) -> FeaturePyramid:
    return build_pyramid_from_image(view.appearance, estimate_noise)


def _cells(coord, size):
    # ties on a cell boundary go to the lower-index cell
    i0 = np.clip(np.ceil(coord).astype(np.int64) - 1, 0, size - 2)
    return i0, coord - i0


def bilinear(data: np.ndarray, u, v, with_gradient: bool = True):
    """Sample an ``(H, W, C)`` or ``(H, W)`` array at arrays of coordinates.

    Coordinates are not bounds-checked; callers mask out-of-image points.
    Returns ``value (..., C)`` and, if requested, ``gradient (..., C, 2)``
    holding ``(d/du, d/dv)`` of the bilinear surface.
    """
    squeeze = data.ndim == 2
    if squeeze:
        data = data[..., None]
    h, w, c = data.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    i0, fu = _cells(u, w)
    j0, fv = _cells(v, h)
    flat = data.reshape(-1, c)
    base = j0 * w + i0
    f00 = np.take(flat, base, axis=0)
    f10 = np.take(flat, base + 1, axis=0)
    f01 = np.take(flat, base + w, axis=0)
    f11 = np.take(flat, base + w + 1, axis=0)
    fu_ = fu[..., None]
    fv_ = fv[..., None]
    top = f00 + fu_ * (f10 - f00)
    bottom = f01 + fu_ * (f11 - f01)
    value = top + fv_ * (bottom - top)
    if squeeze:
        value = value[..., 0]
    if not with_gradient:
        return value
    du = (1.0 - fv_) * (f10 - f00) + fv_ * (f11 - f01)
    dv = bottom - top
    grad = np.stack([du, dv], axis=-1)
    if squeeze:
        grad = grad[..., 0, :]
    return value, grad


def sample(fmap: FeatureMap, p: PixelPoint):
    u, v = float(p[0]), float(p[1])
    if not (0.0 <= u <= fmap.width - 1 and 0.0 <= v <= fmap.height - 1):
        raise OutOfBounds(f"({u}, {v}) outside {fmap.width}x{fmap.height}")
    value, grad = bilinear(fmap.data, np.array(u), np.array(v))
    return value, grad


def joint_weight(wq, wr):
    return wq * wr

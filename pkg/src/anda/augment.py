"""Translation-grid augmentation with an exact adjoint.

Offsets are normalized to the image half-width: the image spans [-1, 1]
per axis, so an offset of 2 moves content fully out of frame. Shifts are
whole pixels (round half up) with zero fill at the vacated edge, which
keeps the operation linear and its adjoint exact.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _round_half_up(value):
    return int(math.floor(value + 0.5))


def pixel_shift(image_shape, tx, ty):
    """Integer (rows, cols) shift for normalized offsets on this image shape."""
    h, w = image_shape[-2], image_shape[-1]
    return _round_half_up(ty * h / 2.0), _round_half_up(tx * w / 2.0)


def shift_pixels(array, dy, dx):
    """Shift the last two axes by whole pixels, zero-filling vacated cells."""
    array = np.asarray(array, dtype=np.float64)
    out = np.zeros_like(array)
    h, w = array.shape[-2], array.shape[-1]
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_y, dst_x] = array[..., src_y, src_x]
    return out


def translate(image, tx, ty):
    """Shift content by round(tx*W/2) columns and round(ty*H/2) rows."""
    image = np.asarray(image, dtype=np.float64)
    dy, dx = pixel_shift(image.shape, tx, ty)
    return shift_pixels(image, dy, dx)


def translate_adjoint(grad, tx, ty):
    """Exact adjoint of translate under the standard inner product.

    The pixel shift is computed exactly as translate computes it and then
    negated, so the adjoint pairing holds even when rounding is asymmetric
    around zero.
    """
    grad = np.asarray(grad, dtype=np.float64)
    dy, dx = pixel_shift(grad.shape, tx, ty)
    return shift_pixels(grad, -dy, -dx)


@dataclass(frozen=True)
class TranslationGrid:
    """Ordered (tx, ty) offsets of an evenly spaced translation grid."""

    offsets: tuple
    n: int
    augmax: float


def translation_offsets(n, augmax, include_identity=False):
    """Build the evenly spaced sqrt(n) x sqrt(n) translation grid.

    For n > 1 the one-dimensional offsets are
    t_i = augmax * (2 i - (s - 1)) / (s - 1), i = 0 .. s-1, s = sqrt(n),
    and the grid is their Cartesian product in row-major order. The ratio
    is formed before the multiply so the offsets are exactly symmetric and
    the endpoints are exactly +-augmax. n == 1 yields the identity grid.
    include_identity appends (0, 0) when even s would otherwise omit it,
    growing the effective count by one.
    """
    n = int(n)
    if n < 1:
        raise ConfigError(f"aug_count must be positive, got {n}")
    if not 0.0 <= augmax <= 2.0:
        raise ConfigError(f"augmax must lie in [0, 2], got {augmax}")
    if n == 1:
        return TranslationGrid(offsets=((0.0, 0.0),), n=1, augmax=0.0)
    s = math.isqrt(n)
    if s * s != n:
        raise ConfigError(f"aug_count must be 1 or a perfect square, got {n}")
    axis = [augmax * ((2 * i - (s - 1)) / (s - 1)) for i in range(s)]
    offsets = [(tx, ty) for tx in axis for ty in axis]
    if include_identity and (0.0, 0.0) not in offsets:
        offsets.append((0.0, 0.0))
    return TranslationGrid(offsets=tuple(offsets), n=len(offsets), augmax=float(augmax))

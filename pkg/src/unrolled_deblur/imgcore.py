"""Image primitives: reflective convolution, disc PSF, resampling, background.

Images are plain 2-D ``float64`` numpy arrays with values nominally in
``[0, 1]``; kernels are 2-D arrays with odd side lengths.  All functions are
pure and return new arrays.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, InvalidParameterError

PSF_DR_STEP = 1e-3


def as_image(img, name: str = "image") -> np.ndarray:
    """Validate and convert ``img`` to a 2-D float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D grayscale array, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InvalidInputError(f"{name} has a zero dimension: {arr.shape}")
    return arr


def _check_kernel(ker) -> np.ndarray:
    k = np.asarray(ker, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise InvalidInputError(f"kernel must be 2-D with odd sides, got shape {k.shape}")
    return k


@lru_cache(maxsize=64)
def _reflect_matrix(n: int, pad: int) -> np.ndarray:
    # (n + 2 pad) x n selection matrix of half-sample symmetric extension
    m = np.pad(np.eye(n), ((pad, pad), (0, 0)), mode="symmetric")
    m.setflags(write=False)
    return m


# ---------------------------------------------------------------- convolution

def convolve(img, ker) -> np.ndarray:
    """2-D convolution with reflective (half-sample symmetric) boundaries.

    The output has the shape of ``img``.  The extension mirrors about the
    pixel edge, i.e. ``d c b a | a b c d | d c b a``.
    """
    x = as_image(img)
    k = _check_kernel(ker)
    a, b = k.shape[0] // 2, k.shape[1] // 2
    h, w = x.shape
    xp = np.pad(x, ((a, a), (b, b)), mode="symmetric")
    full = ndimage.convolve(xp, k, mode="constant")
    return full[a:a + h, b:b + w]


def convolve_adjoint(img, ker) -> np.ndarray:
    """Adjoint of :func:`convolve` for the same kernel.

    Satisfies ``<convolve(x, k), y> == <x, convolve_adjoint(y, k)>``.
    """
    y = as_image(img)
    k = _check_kernel(ker)
    a, b = k.shape[0] // 2, k.shape[1] // 2
    h, w = y.shape
    yp = np.pad(y, ((a, a), (b, b)))
    z = ndimage.correlate(yp, k, mode="constant")
    # fold the reflected margins back onto the pixels they were copied from
    return _reflect_matrix(h, a).T @ z @ _reflect_matrix(w, b)


# ------------------------------------------------------------------- disc PSF

def _disc_quadrant_area(a: np.ndarray, b: np.ndarray, r: float) -> np.ndarray:
    """Area of the disc ``x^2 + y^2 <= r^2`` intersected with ``{x <= a, y <= b}``."""

    def prim(x):
        # antiderivative of sqrt(r^2 - x^2)
        x = np.clip(x, -r, r)
        return 0.5 * (x * np.sqrt(np.maximum(r * r - x * x, 0.0)) + r * r * np.arcsin(x / r))

    A = np.clip(a, -r, r)
    bc = np.clip(b, -r, r)
    xs = np.sqrt(np.maximum(r * r - bc * bc, 0.0))

    # middle strip |x| < xs: vertical extent is [-s(x), b]
    hi2 = np.clip(A, -xs, xs)
    mid = bc * (hi2 + xs) + prim(hi2) - prim(-xs)
    # outer strips (only when b >= 0): full chord 2 s(x)
    left = 2.0 * (prim(np.minimum(A, -xs)) - prim(-r))
    right = 2.0 * (prim(np.maximum(A, xs)) - prim(xs))
    return np.where(bc >= 0.0, left + mid + right, mid)


def disc_support(r: float) -> int:
    """Odd side of the smallest square covering a disc of radius ``r``."""
    return 2 * max(0, math.ceil(r - 0.5)) + 1


def _disc_areas(r: float, half: int) -> np.ndarray:
    c = np.arange(-half, half + 1, dtype=np.float64)
    y0, x0 = np.meshgrid(c - 0.5, c - 0.5, indexing="ij")
    y1, x1 = y0 + 1.0, x0 + 1.0
    area = (_disc_quadrant_area(x1, y1, r) - _disc_quadrant_area(x0, y1, r)
            - _disc_quadrant_area(x1, y0, r) + _disc_quadrant_area(x0, y0, r))
    return np.maximum(area, 0.0)


def disc_psf(r: float, side: int | None = None) -> np.ndarray:
    """Normalised characteristic function of a disc of radius ``r`` pixels.

    Each pixel holds the exact area of its intersection with the disc; the
    result sums to one.  ``side`` may enlarge the support (zero border).
    """
    r = float(r)
    if not r > 0 or not math.isfinite(r):
        raise InvalidParameterError(f"radius must be positive, got {r}")
    n = disc_support(r)
    if side is None:
        side = n
    if side < n or side % 2 == 0:
        raise InvalidParameterError(f"side {side} cannot hold a disc of radius {r}")
    areas = _disc_areas(r, side // 2)
    return areas / areas.sum()


def disc_psf_dr(r: float, h: float = PSF_DR_STEP) -> np.ndarray:
    """Derivative of :func:`disc_psf` with respect to the radius.

    Central difference ``(psf(r+h) - psf(r-h)) / 2h`` on the support of
    ``psf(r+h)``; the smaller kernel is zero padded.
    """
    r = float(r)
    if not r - h > 0:
        raise InvalidParameterError(f"radius {r} too small for difference step {h}")
    side = disc_support(r + h)
    return (disc_psf(r + h, side) - disc_psf(r - h, side)) / (2.0 * h)


def pad_kernel(ker: np.ndarray, side: int) -> np.ndarray:
    """Zero-pad an odd square kernel to ``side`` x ``side``."""
    p = (side - ker.shape[0]) // 2
    if p < 0:
        raise InvalidInputError("target side smaller than kernel")
    return np.pad(ker, p) if p else ker


# ------------------------------------------------------------ resampling etc.

def _block(factor: float) -> int:
    if factor <= 0 or factor > 1:
        raise InvalidParameterError(f"resize factor must be in (0, 1], got {factor}")
    s = round(1.0 / factor)
    if abs(s * factor - 1.0) > 1e-9:
        raise InvalidParameterError(f"resize factor must be 1/integer, got {factor}")
    return s


def resize(img, factor: float) -> np.ndarray:
    """Block-average downsampling by ``factor`` (``1/2``, ``1/4``, ``1/8``...).

    Dimensions not divisible by the block size are first extended by
    reflection.
    """
    x = as_image(img)
    s = _block(factor)
    if s == 1:
        return x.copy()
    h, w = x.shape
    ph, pw = (-h) % s, (-w) % s
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw)), mode="symmetric")
    H, W = x.shape
    return x.reshape(H // s, s, W // s, s).mean(axis=(1, 3))


def resize_adjoint(img, factor: float, shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of :func:`resize` for inputs of ``shape`` (divisible case)."""
    y = as_image(img)
    s = _block(factor)
    if shape[0] % s or shape[1] % s:
        raise InvalidInputError("adjoint only defined when the block size divides the shape")
    if y.shape != (shape[0] // s, shape[1] // s):
        raise InvalidInputError("shape mismatch in resize adjoint")
    return np.repeat(np.repeat(y, s, axis=0), s, axis=1) / (s * s)


def flip_intensity(img) -> np.ndarray:
    """Swap dark and light: ``1 - u`` pixelwise."""
    return 1.0 - as_image(img)


def radial_warp(img, R: float, cx: float, cy: float) -> np.ndarray:
    """Resample ``img`` at ``(cy + R (y - cy), cx + R (x - cx))``.

    Bilinear interpolation; sample positions outside the image are clamped to
    the nearest border pixel.  ``x`` indexes columns, ``y`` rows.
    """
    x = as_image(img)
    if not R > 0:
        raise InvalidParameterError(f"warp scale must be positive, got {R}")
    h, w = x.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    ys = np.clip(cy + R * (yy - cy), 0.0, h - 1.0)
    xs = np.clip(cx + R * (xx - cx), 0.0, w - 1.0)
    return ndimage.map_coordinates(x, [ys, xs], order=1, mode="nearest")


def estimate_background(img, frame_width: int) -> np.ndarray:
    """Smooth background from the border frame of ``img``.

    Frame pixels are kept; the interior is a Coons (transfinite bilinear)
    patch through the four frame strips, each averaged across its width.
    Affine intensity fields are reproduced exactly.
    """
    x = as_image(img)
    h, w = x.shape
    fw = int(frame_width)
    if fw < 1 or 2 * fw >= min(h, w):
        raise InvalidParameterError(f"frame width {fw} invalid for image {h}x{w}")

    top = x[:fw].mean(axis=0)
    bot = x[h - fw:].mean(axis=0)
    left = x[:, :fw].mean(axis=1)
    right = x[:, w - fw:].mean(axis=1)
    yt, yb = (fw - 1) / 2.0, h - 1 - (fw - 1) / 2.0
    xl, xr = (fw - 1) / 2.0, w - 1 - (fw - 1) / 2.0
    cols = np.arange(w, dtype=np.float64)

    def at(curve, pos):
        return np.interp(pos, cols, curve)

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), cols, indexing="ij")
    s = (xx - xl) / (xr - xl)
    t = (yy - yt) / (yb - yt)
    patch = ((1 - s) * left[:, None] + s * right[:, None]
             + (1 - t) * top[None, :] + t * bot[None, :]
             - ((1 - s) * (1 - t) * at(top, xl) + s * (1 - t) * at(top, xr)
                + (1 - s) * t * at(bot, xl) + s * t * at(bot, xr)))
    out = x.copy()
    out[fw:h - fw, fw:w - fw] = patch[fw:h - fw, fw:w - fw]
    return out

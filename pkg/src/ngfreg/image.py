"""Images, preprocessing, pyramids, bilinear sampling and discrete gradients.

Coordinates are physical. Pixel ``(i, j)`` (row, column) of an image has its
center at ``origin + ((j + 0.5) * h, (i + 0.5) * h)``; points are stored as
``(x1, x2) = (horizontal, vertical)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import cv2
import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class DegenerateMassError(ValueError):
    """Raised when an image has no positive mass."""


@dataclass(frozen=True, eq=False)
class Image:
    """2D scalar image with uniform pixel size.

    Parameters
    ----------
    data : (height, width) array
        Intensities in ``[0, 1]``.
    spacing : float
        Physical edge length of one pixel (``h``).
    origin : (2,) array
        Physical position of the upper-left corner of the first pixel.
    """

    data: np.ndarray
    spacing: float = 1.0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64).view()
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"image data must be a non-empty 2D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image data contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        origin = np.asarray(self.origin, dtype=np.float64).reshape(2)
        data.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", origin)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def extent(self) -> np.ndarray:
        """Physical (width, height) of the image domain."""
        return np.array([self.width, self.height], dtype=np.float64) * self.spacing

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """1D arrays of physical x1 (columns) and x2 (rows) pixel-center coordinates."""
        h = self.spacing
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * h
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * h
        return xs, ys

    def grid_points(self) -> np.ndarray:
        """All pixel centers as an ``(height, width, 2)`` array."""
        xs, ys = self.pixel_centers()
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def with_data(self, data: np.ndarray) -> "Image":
        return Image(data, self.spacing, self.origin)


@dataclass(frozen=True)
class ImagePyramid:
    """Multilevel image stack, coarsest level first."""

    levels: List[Image]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> Image:
        return self.levels[-1]

    @property
    def coarsest(self) -> Image:
        return self.levels[0]

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k) -> Image:
        return self.levels[k]

    def __iter__(self):
        return iter(self.levels)


def preprocess(raw, spacing: float = 1.0) -> Image:
    """Convert a gray or RGB(A) image to an inverted gray :class:`Image`.

    Integer inputs are scaled by their dtype maximum, float inputs are assumed
    to be in ``[0, 1]``. White background maps to 0, black tissue to 1.
    """
    arr = np.asarray(raw)
    if arr.size == 0 or arr.ndim not in (2, 3):
        raise ValueError(f"cannot preprocess image of shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float64) / np.iinfo(arr.dtype).max
    elif arr.dtype == np.bool_:
        arr = arr.astype(np.float64)
    else:
        arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("raw image contains non-finite values")
        arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 3:
        channels = arr.shape[2]
        if channels in (1, 2):
            # gray or gray+alpha
            arr = arr[..., 0]
        elif channels in (3, 4):
            arr = arr[..., :3] @ np.asarray(LUMA_WEIGHTS)
        else:
            raise ValueError(f"unsupported channel count {channels}")
    gray = np.clip(arr, 0.0, 1.0)
    return Image(1.0 - gray, spacing)


def downsample(img: Image) -> Image:
    """Halve an image with a 2x2 box filter; odd sizes are edge-replicated."""
    data = img.data
    h, w = data.shape
    if h % 2 or w % 2:
        data = np.pad(data, ((0, h % 2), (0, w % 2)), mode="edge")
    coarse = 0.25 * (data[0::2, 0::2] + data[1::2, 0::2] + data[0::2, 1::2] + data[1::2, 1::2])
    return Image(np.clip(coarse, 0.0, 1.0), 2.0 * img.spacing, img.origin)


def resample_to_max(img: Image, n_max: int) -> Image:
    """Area-average ``img`` so that ``max(width, height) <= n_max``; never upsamples.

    The physical extent of the longer side is preserved exactly.
    """
    big = max(img.width, img.height)
    if big <= n_max:
        return img
    scale = n_max / big
    new_w = max(1, min(n_max, int(round(img.width * scale))))
    new_h = max(1, min(n_max, int(round(img.height * scale))))
    data = cv2.resize(img.data, (new_w, new_h), interpolation=cv2.INTER_AREA)
    spacing = img.spacing * big / max(new_w, new_h)
    return Image(np.clip(data, 0.0, 1.0), spacing, img.origin)


def build_pyramid(img: Union[Image, ImagePyramid], n_level: int, n_max: int) -> ImagePyramid:
    """Multilevel representation of ``img`` with at most ``n_level`` levels.

    The finest level is ``img`` area-resampled to ``max(width, height) <= n_max``.
    Coarser levels are 2x2 box averages, stopping once a side would drop
    below two pixels. If ``img`` is itself a pyramid, the coarsest stored
    level that still satisfies the ``n_max`` cap from above is used as source.
    """
    if n_level < 1:
        raise ValueError("n_level must be >= 1")
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    if isinstance(img, ImagePyramid):
        source = img.finest
        for lvl in img.levels:
            if max(lvl.width, lvl.height) >= n_max:
                source = lvl
                break
        img = source
    finest = resample_to_max(img, n_max)
    levels = [finest]
    while len(levels) < n_level and min(levels[-1].width, levels[-1].height) >= 3:
        levels.append(downsample(levels[-1]))
    return ImagePyramid(levels[::-1])


def full_pyramid(img: Image) -> ImagePyramid:
    """All halvings of ``img`` down to a two-pixel side, coarsest first."""
    return build_pyramid(img, n_level=10**6, n_max=max(img.width, img.height, 2))


def _as_points(p) -> Tuple[np.ndarray, bool]:
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have a trailing dimension of 2, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("interpolation point is not finite")
    return pts, single


class BilinearSampler:
    """Reusable bilinear sampler over one image (keeps the zero-padded copy)."""

    def __init__(self, img: Image):
        h, w = img.shape
        # zero frame of one pixel keeps the interpolant continuous while
        # everything beyond the frame samples the background
        self.padded = np.zeros((h + 2, w + 2))
        self.padded[1:-1, 1:-1] = img.data
        self.shape = (h, w)
        self.spacing = img.spacing
        self.origin = img.origin

    def __call__(self, pts: np.ndarray, derivative: bool = False):
        h, w = self.shape
        padded = self.padded
        u = (pts[..., 0] - self.origin[0]) / self.spacing + 0.5
        v = (pts[..., 1] - self.origin[1]) / self.spacing + 0.5
        inside = (u >= 0.0) & (u <= w + 1) & (v >= 0.0) & (v <= h + 1)
        u = np.where(inside, u, 0.0)
        v = np.where(inside, v, 0.0)
        j0 = np.minimum(u.astype(np.intp), w)
        i0 = np.minimum(v.astype(np.intp), h)
        fx = u - j0
        fy = v - i0
        f00 = padded[i0, j0]
        f01 = padded[i0, j0 + 1]
        f10 = padded[i0 + 1, j0]
        f11 = padded[i0 + 1, j0 + 1]
        top = f00 + fx * (f01 - f00)
        bottom = f10 + fx * (f11 - f10)
        vals = np.where(inside, top + fy * (bottom - top), 0.0)
        if not derivative:
            return vals
        grad = np.empty(vals.shape + (2,))
        grad[..., 0] = ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)) / self.spacing
        grad[..., 1] = (bottom - top) / self.spacing
        grad *= inside[..., None]
        return vals, grad


def interpolate(img: Image, p) -> Union[float, np.ndarray]:
    """Bilinear interpolation of ``img`` at physical point(s) ``p``.

    Samples outside the image see background 0; the interpolant ramps to zero
    over the half pixel beyond the outermost pixel centers.
    """
    pts, single = _as_points(p)
    vals = BilinearSampler(img)(pts)
    return float(vals) if single else vals


def interpolate_with_gradient(img: Image, p) -> Tuple[np.ndarray, np.ndarray]:
    """Bilinear values and their spatial derivative at physical point(s) ``p``."""
    pts, _ = _as_points(p)
    return BilinearSampler(img)(pts, derivative=True)


def gradient(img: Union[Image, np.ndarray], spacing: float = None) -> np.ndarray:
    """Finite-difference gradient, shape ``(2, height, width)``.

    Central differences inside, one-sided differences on the border.
    Channel 0 is the derivative along x1 (columns), channel 1 along x2 (rows).
    """
    if isinstance(img, Image):
        data, h = img.data, img.spacing
    else:
        data, h = np.asarray(img, dtype=np.float64), (1.0 if spacing is None else spacing)
    if data.ndim != 2 or min(data.shape) < 2:
        raise ValueError(f"gradient needs at least 2x2 pixels, got {data.shape}")
    g = np.empty((2,) + data.shape)
    for axis, out in ((1, g[0]), (0, g[1])):
        d = np.moveaxis(data, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[1:-1] = (d[2:] - d[:-2]) / (2.0 * h)
        o[0] = (d[1] - d[0]) / h
        o[-1] = (d[-1] - d[-2]) / h
    return g


def gradient_adjoint(g: np.ndarray, spacing: float) -> np.ndarray:
    """Adjoint of :func:`gradient` applied to a ``(2, height, width)`` field."""
    out = np.zeros(g.shape[1:])
    h = spacing
    for axis, comp in ((1, g[0]), (0, g[1])):
        c = np.moveaxis(comp, axis, 0)
        o = np.moveaxis(out, axis, 0)
        n = c.shape[0]
        o[2:] += c[1:-1] / (2.0 * h)
        o[:-2] -= c[1:-1] / (2.0 * h)
        o[1] += c[0] / h
        o[0] -= c[0] / h
        o[n - 1] += c[-1] / h
        o[n - 2] -= c[-1] / h
    return out


def center_of_mass(img: Image) -> np.ndarray:
    """Intensity-weighted mean of the pixel centers."""
    mass = img.data.sum()
    if not mass > 0:
        raise DegenerateMassError("image has no positive mass")
    xs, ys = img.pixel_centers()
    cx = (img.data.sum(axis=0) @ xs) / mass
    cy = (img.data.sum(axis=1) @ ys) / mass
    return np.array([cx, cy])


def geometric_center(img: Image) -> np.ndarray:
    return img.origin + 0.5 * img.extent

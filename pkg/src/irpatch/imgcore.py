"""Grid types, adversarial composition and small convolution helpers.

Every image, mask, kernel and gradient in the package is a 2-D float64
``numpy`` array.  :class:`GrayImage` and :class:`Mask` are thin validated
wrappers used at API boundaries; they expose ``__array__`` so they can be
handed to any function that expects a plain array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError, PreconditionError

#: Ring-adjacency counts of the eight neighbours of a pixel.
AGG_KERNEL = np.array([[2.0, 4.0, 2.0], [4.0, 0.0, 4.0], [2.0, 4.0, 2.0]])


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _check_unit_range(a: np.ndarray, what: str) -> None:
    if a.size and (np.isnan(a).any() or a.min() < 0.0 or a.max() > 1.0):
        raise ParameterError(f"{what} values must lie in [0, 1]")


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise DimensionError(f"expected a non-empty 2-D grid, got shape {a.shape}")
        _check_unit_range(a, "image")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @classmethod
    def constant(cls, shape: tuple[int, int], value: float) -> GrayImage:
        return cls(np.full(shape, float(value)))


@dataclass(frozen=True)
class Mask:
    """Patch or object mask.

    ``kind="continuous"`` holds the relaxed mask in [0, 1]; ``kind="binary"``
    requires every entry to be exactly 0 or 1.
    """

    grid: np.ndarray
    kind: Literal["continuous", "binary"] = "continuous"

    def __post_init__(self):
        a = np.asarray(self.grid, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise DimensionError(f"expected a non-empty 2-D grid, got shape {a.shape}")
        if self.kind == "binary":
            if not is_binary(a):
                raise PreconditionError("binary mask contains values other than 0 and 1")
        elif self.kind == "continuous":
            _check_unit_range(a, "mask")
        else:
            raise ParameterError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "grid", _frozen(a))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def __array__(self, dtype=None, copy=None):
        return self.grid if dtype is None else self.grid.astype(dtype)


@dataclass(frozen=True)
class CoverSpec:
    """Uniform intensity of the occluding material."""

    value: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ParameterError(f"cover value {self.value} outside [0, 1]")

    def image(self, shape: tuple[int, int]) -> np.ndarray:
        return np.full(shape, float(self.value))


def is_binary(a) -> bool:
    a = np.asarray(a)
    return bool(np.all((a == 0.0) | (a == 1.0)))


def check_same_shape(*arrays) -> tuple[int, int]:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"shape mismatch: {sorted(shapes)}")
    return shapes.pop()


def compose_adversarial(x, cover: CoverSpec | float, m) -> np.ndarray:
    """Paste the constant cover into ``x`` wherever ``m`` is on.

    Returns ``x * (1 - m) + cover * m`` clipped to [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    check_same_shape(x, m)
    c = cover.value if isinstance(cover, CoverSpec) else float(cover)
    out = x * (1.0 - m) + c * m
    return np.clip(out, 0.0, 1.0)


def convolve_same(img, kernel, mode: str = "constant") -> np.ndarray:
    """2-D convolution; output has the input's shape.

    ``mode`` is the boundary rule of :func:`scipy.ndimage.convolve`; the
    default pads with zeros.
    """
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected a non-empty 2-D grid, got shape {img.shape}")
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ParameterError(f"kernel must be 2-D with odd sides, got {kernel.shape}")
    return ndimage.convolve(img, kernel, mode=mode, cval=0.0)


def convolve3x3(img, k=AGG_KERNEL) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (3, 3):
        raise ParameterError(f"expected a 3x3 kernel, got {k.shape}")
    return convolve_same(img, k)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ParameterError(f"gaussian kernel size must be odd and positive, got {size}")
    if not sigma > 0:
        raise ParameterError(f"gaussian sigma must be positive, got {sigma}")
    r = np.arange(size, dtype=np.float64) - size // 2
    rr, cc = np.meshgrid(r, r, indexing="ij")
    k = np.exp(-(rr**2 + cc**2) / (2.0 * sigma**2))
    return k / k.sum()


def minmax_normalize(grid) -> np.ndarray:
    """Rescale to [0, 1]; a constant grid maps to all ones."""
    a = np.asarray(grid, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.ones_like(a)
    return (a - lo) / (hi - lo)

"""Raster containers for real and complex images on the subpixel grid.

Values are stored flat in row-major order, so ``values[i * d2 + j]`` is the
subpixel at row ``i`` and column ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError


def _flat(values, d1, d2, dtype):
    arr = np.array(values, dtype=dtype).reshape(-1)
    if d1 < 1 or d2 < 1:
        raise InvalidArgumentError(f"grid dimensions must be positive, got {d1}x{d2}")
    if arr.size != d1 * d2:
        raise DimensionMismatchError(f"expected {d1 * d2} values for a {d1}x{d2} grid, got {arr.size}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageGrid:
    """Real-valued ``d1 x d2`` raster.

    When ``nonneg`` is set the constructor rejects negative entries.
    """

    d1: int
    d2: int
    values: np.ndarray = field(repr=False)
    nonneg: bool = False

    def __post_init__(self):
        vals = _flat(self.values, self.d1, self.d2, np.float64)
        if self.nonneg and vals.size and vals.min() < 0:
            raise InvalidArgumentError("nonneg grid has negative entries")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, arr, nonneg: bool = False) -> "ImageGrid":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidArgumentError(f"expected a 2D array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr.ravel(), nonneg)

    @property
    def n(self) -> int:
        return self.d1 * self.d2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.d1, self.d2)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.d1, self.d2)

    def with_values(self, values, nonneg: bool | None = None) -> "ImageGrid":
        return ImageGrid(self.d1, self.d2, values, self.nonneg if nonneg is None else nonneg)


@dataclass(frozen=True)
class ComplexField:
    """Complex-valued ``d1 x d2`` raster (wavefields, complex images)."""

    d1: int
    d2: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _flat(self.values, self.d1, self.d2, np.complex128))

    @classmethod
    def from_array(cls, arr) -> "ComplexField":
        arr = np.asarray(arr, dtype=np.complex128)
        if arr.ndim != 2:
            raise InvalidArgumentError(f"expected a 2D array, got shape {arr.shape}")
        return cls(arr.shape[0], arr.shape[1], arr.ravel())

    @property
    def n(self) -> int:
        return self.d1 * self.d2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.d1, self.d2)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.d1, self.d2)


def values_of(image) -> np.ndarray:
    """Flat value vector of a grid or array-like."""
    if isinstance(image, (ImageGrid, ComplexField)):
        return image.values
    return np.asarray(image).reshape(-1)

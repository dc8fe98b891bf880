"""Synthetic targets, Gaussian illumination and their product."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError
from .grids import ComplexField, ImageGrid

PHANTOM_KINDS = ("x_cross", "gradient", "pi_glyph", "siemens_star", "disk")


def _centered_coords(d1, d2):
    # normalized to [-1, 1] on pixel centres, exactly antisymmetric about the centre
    u = (np.arange(d1) - (d1 - 1) / 2.0) / (d1 / 2.0)
    v = (np.arange(d2) - (d2 - 1) / 2.0) / (d2 / 2.0)
    return np.meshgrid(u, v, indexing="ij")


def _x_cross(d1, d2):
    u, v = _centered_coords(d1, d2)
    half_width = max(0.13, 1.6 / min(d1, d2))
    inside = np.maximum(np.abs(u), np.abs(v)) <= 0.8
    bars = (np.abs(u - v) <= half_width) | (np.abs(u + v) <= half_width)
    return (bars & inside).astype(float)


def _gradient(d1, d2):
    ramp = np.arange(d2) / max(d2 - 1, 1)
    return np.tile(ramp, (d1, 1))


def _pi_glyph(d1, d2):
    # glyph drawn in fractional coordinates of the raster; exact strokes are cosmetic
    r = (np.arange(d1) + 0.5) / d1
    c = (np.arange(d2) + 0.5) / d2
    R, C = np.meshgrid(r, c, indexing="ij")
    top = (R >= 0.18) & (R < 0.32) & (C >= 0.12) & (C < 0.88)
    left = (R >= 0.32) & (R < 0.84) & (C >= 0.28) & (C < 0.41)
    right = (R >= 0.32) & (R < 0.78) & (C >= 0.60) & (C < 0.73)
    foot = (R >= 0.72) & (R < 0.84) & (C >= 0.73) & (C < 0.84)
    return (top | left | right | foot).astype(float)


def _siemens_star(d1, d2, spokes):
    u, v = _centered_coords(d1, d2)
    radius = np.hypot(u, v)
    theta = np.arctan2(u, v)
    sector = np.floor(theta * spokes / np.pi).astype(int) % 2 == 0
    return ((radius <= 0.9) & sector).astype(float)


def _disk(d1, d2):
    u, v = _centered_coords(d1, d2)
    return (np.hypot(u, v) <= 0.5).astype(float)


def make_phantom(kind: str, d1: int, d2: int, spokes: int = 8, background: float = 0.0) -> ImageGrid:
    """Render a synthetic target with values in [0, 1].

    ``x_cross``, ``pi_glyph``, ``siemens_star`` and ``disk`` are binary (1 on the
    feature, 0 elsewhere). ``gradient`` is a ramp from 0 in the first column to 1
    in the last one, covering the whole raster.

    ``background`` lifts the floor: values become ``b + (1 - b) * shape``, which
    keeps the target strictly positive for log-domain calibration.
    """
    if kind not in PHANTOM_KINDS:
        raise InvalidArgumentError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
    min_size = 2 if kind == "gradient" else 8
    if d1 < min_size or d2 < min_size:
        raise InvalidArgumentError(f"{kind} phantom needs at least {min_size}x{min_size} subpixels")
    if not 0.0 <= background < 1.0:
        raise InvalidArgumentError("background must lie in [0, 1)")
    if kind == "x_cross":
        img = _x_cross(d1, d2)
    elif kind == "gradient":
        img = _gradient(d1, d2)
    elif kind == "pi_glyph":
        img = _pi_glyph(d1, d2)
    elif kind == "disk":
        img = _disk(d1, d2)
    else:
        if spokes < 1:
            raise InvalidArgumentError("siemens star needs at least one spoke")
        img = _siemens_star(d1, d2, spokes)
    if background:
        img = background + (1.0 - background) * img
    return ImageGrid.from_array(img, nonneg=True)


def make_gaussian_beam(d1: int, d2: int, center=None, sigma: float = 1.0, peak: float = 1.0) -> ImageGrid:
    """Gaussian illumination ``peak * exp(-|pos - center|^2 / (2 sigma^2))``.

    Positions are (row, col) grid-node indices; ``center`` defaults to the
    geometric centre of the raster and may be fractional.
    """
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    if not 0 < peak <= 1:
        raise InvalidArgumentError("peak must lie in (0, 1]")
    if center is None:
        center = ((d1 - 1) / 2.0, (d2 - 1) / 2.0)
    rows, cols = np.meshgrid(np.arange(d1, dtype=float), np.arange(d2, dtype=float), indexing="ij")
    dist2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
    return ImageGrid.from_array(peak * np.exp(-dist2 / (2.0 * sigma**2)), nonneg=True)


def compose_scene(beam: ImageGrid, target: ImageGrid) -> ImageGrid:
    """Illuminated scene: pointwise product of beam and target."""
    if beam.shape != target.shape:
        raise DimensionMismatchError(f"beam {beam.shape} and target {target.shape} differ")
    if target.values.min() < 0 or target.values.max() > 1:
        raise InvalidArgumentError("target values must lie in [0, 1]")
    if beam.values.min() < 0:
        raise InvalidArgumentError("beam must be non-negative")
    return ImageGrid(beam.d1, beam.d2, beam.values * target.values, nonneg=True)


def make_complex_test_image(d1: int, d2: int, amplitude_floor: float = 0.3, max_phase: float = np.pi / 2):
    """Amplitude-and-phase object for complex phase retrieval.

    The amplitude is the ``pi_glyph`` phantom lifted to ``amplitude_floor``; the
    phase is a smooth Gaussian bump peaking at ``max_phase`` in the centre.
    """
    amp = make_phantom("pi_glyph", d1, d2, background=amplitude_floor).as_array()
    u, v = _centered_coords(d1, d2)
    phase = max_phase * np.exp(-(u**2 + v**2) / 0.3)
    return ComplexField.from_array(amp * np.exp(1j * phase))

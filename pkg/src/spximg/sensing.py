"""Forward models: mask sums, Fresnel propagation, intensity detection and noise."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    InvalidArgumentError,
    UnsupportedModeError,
)
from .grids import values_of
from .masks import MaskEnsemble


class FresnelPropagator:
    """Band-limited angular-spectrum propagation on a periodic grid.

    Acts as ``ifft2(H * fft2(u))`` with ``H(f) = exp(2j*pi*z*sqrt(1/wl^2 - |f|^2))``.
    Construction fails with :class:`ConfigurationError` when any grid frequency
    is evanescent or exceeds the band limit ``1 / (wl * sqrt((2 df z)^2 + 1))``,
    so every accepted operator is unitary.
    """

    def __init__(self, d1: int, d2: int, wavelength: float, distance: float, pitch: float):
        if wavelength <= 0 or pitch <= 0:
            raise InvalidArgumentError("wavelength and pitch must be positive")
        if distance < 0:
            raise InvalidArgumentError("distance must be non-negative")
        self.d1, self.d2 = d1, d2
        self.wavelength, self.distance, self.pitch = wavelength, distance, pitch
        fy = np.fft.fftfreq(d1, d=pitch)
        fx = np.fft.fftfreq(d2, d=pitch)
        FY, FX = np.meshgrid(fy, fx, indexing="ij")
        arg = 1.0 / wavelength**2 - FX**2 - FY**2
        if arg.min() <= 0:
            raise ConfigurationError(
                f"pitch {pitch} too fine for wavelength {wavelength}: evanescent frequencies on the grid"
            )
        for n_axis, f in ((d1, fy), (d2, fx)):
            df = 1.0 / (n_axis * pitch)
            limit = 1.0 / (wavelength * math.sqrt((2.0 * df * distance) ** 2 + 1.0))
            if np.abs(f).max() > limit:
                raise ConfigurationError(
                    f"angular-spectrum sampling violated: |f|max={np.abs(f).max():.4g} > band limit "
                    f"{limit:.4g} for distance {distance}; increase pitch or grid size"
                )
        self.transfer = np.exp(2j * np.pi * distance * np.sqrt(arg))

    @property
    def n(self) -> int:
        return self.d1 * self.d2

    def _filter(self, u, H):
        img = np.asarray(u, dtype=complex).reshape(self.d1, self.d2)
        return np.fft.ifft2(np.fft.fft2(img) * H).ravel()

    def apply(self, u) -> np.ndarray:
        return self._filter(u, self.transfer)

    def adjoint(self, u) -> np.ndarray:
        return self._filter(u, np.conj(self.transfer))

    def transpose_apply(self, u) -> np.ndarray:
        return np.conj(self.adjoint(np.conj(np.asarray(u, dtype=complex))))

    def matrix(self) -> np.ndarray:
        """Dense ``n x n`` matrix; for tests and small grids only."""
        return np.stack([self.apply(e) for e in np.eye(self.n)], axis=1)

    def compose(self, other: "FresnelPropagator") -> "FresnelPropagator":
        return FresnelPropagator(self.d1, self.d2, self.wavelength, self.distance + other.distance, self.pitch)


@dataclass(frozen=True)
class Measurements:
    y: np.ndarray
    mode: str = "linear"
    snr_db: float | None = None
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.y.size


class SensingOperator:
    """Masks, optionally sandwiched between object->mask and mask->detector propagation.

    Without diffraction the linear map is the plain mask-sum matrix ``A``. With a
    propagator pair it is ``B`` with rows ``B_i = 1^T D_md diag(A_i) D_om``,
    applied as ``A @ (w * (D_om x))`` where ``w = D_md^T 1`` so no per-mask
    propagation is needed. In ``intensity`` mode the measured quantity is
    ``|B x|^2``.
    """

    def __init__(self, masks: MaskEnsemble, diffraction=None, mode: str = "linear"):
        if mode not in ("linear", "intensity"):
            raise InvalidArgumentError(f"unknown sensing mode {mode!r}")
        if diffraction is not None:
            d_om, d_md = diffraction
            for d in (d_om, d_md):
                if (d.d1, d.d2) != (masks.d1, masks.d2):
                    raise DimensionMismatchError("propagator grid differs from mask grid")
        self.masks = masks
        self.diffraction = diffraction
        self.mode = mode

    @property
    def m(self) -> int:
        return self.masks.m

    @property
    def n(self) -> int:
        return self.masks.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.masks.d1, self.masks.d2)

    @property
    def is_complex(self) -> bool:
        return self.diffraction is not None

    def with_mode(self, mode: str) -> "SensingOperator":
        return SensingOperator(self.masks, self.diffraction, mode)

    @cached_property
    def detector_weights(self) -> np.ndarray:
        d_md = self.diffraction[1]
        return d_md.transpose_apply(np.ones(self.n))

    def linear_apply(self, x) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        if x.size != self.n:
            raise DimensionMismatchError(f"image has {x.size} subpixels, operator expects {self.n}")
        if self.diffraction is None:
            return self.masks.apply(x)
        return self.masks.apply(self.detector_weights * self.diffraction[0].apply(x))

    def linear_adjoint(self, v) -> np.ndarray:
        v = np.asarray(v).reshape(-1)
        if self.diffraction is None:
            return self.masks.adjoint(v)
        back = np.conj(self.detector_weights) * self.masks.adjoint(v.astype(complex))
        return self.diffraction[0].adjoint(back)

    def apply(self, x) -> np.ndarray:
        z = self.linear_apply(x)
        if self.mode == "intensity":
            return np.abs(z) ** 2
        return z

    def adjoint(self, y) -> np.ndarray:
        if self.mode != "linear":
            raise UnsupportedModeError("adjoint is only defined for linear-mode operators")
        return self.linear_adjoint(y)

    def row_norms_squared(self) -> np.ndarray:
        """``||B_i||^2`` for every measurement row, without forming ``B``."""
        if self.diffraction is None:
            v = np.ones(self.n)
        else:
            # D_om is unitary, so only the detector weights on the mask plane matter
            v = np.abs(self.detector_weights) ** 2
        c, o = self.masks.closed_value, self.masks.open_value
        total = v.sum()
        return c * c * total + (o + c) * (self.masks.apply(v) - c * total)

    def matrix(self) -> np.ndarray:
        """Dense linear map (``A`` or ``B``); for tests and small grids."""
        if self.diffraction is None:
            return self.masks.matrix.astype(float)
        return np.stack([self.linear_apply(e) for e in np.eye(self.n, dtype=complex)], axis=1)


def forward_measure(op: SensingOperator, image) -> Measurements:
    """Simulate noiseless detector readings for ``image``."""
    x = values_of(image)
    if x.size != op.n:
        raise DimensionMismatchError(f"image has {x.size} subpixels, operator expects {op.n}")
    if op.mode == "linear" and not op.is_complex and np.iscomplexobj(x):
        raise UnsupportedModeError("complex image given to a real linear operator")
    return Measurements(y=np.asarray(op.apply(x)), mode=op.mode)


def adjoint_measure(op: SensingOperator, y) -> np.ndarray:
    """Back-project measurements; only defined in linear mode."""
    if isinstance(y, Measurements):
        y = y.y
    return op.adjoint(y)


def add_noise(meas: Measurements, snr_db: float, seed: int = 0) -> Measurements:
    """Add white Gaussian noise rescaled to hit ``snr_db`` exactly.

    SNR is ``20 log10(||y|| / ||e||)``; ``math.inf`` returns the input unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return meas
    y = np.asarray(meas.y)
    norm_y = np.linalg.norm(y)
    if norm_y == 0:
        raise InvalidArgumentError("cannot set an SNR for an all-zero measurement vector")
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(y.shape)
    e *= norm_y / (np.linalg.norm(e) * 10.0 ** (snr_db / 20.0))
    realized = 20.0 * math.log10(norm_y / np.linalg.norm(e))
    return replace(meas, y=y + e, snr_db=realized, seed=seed)


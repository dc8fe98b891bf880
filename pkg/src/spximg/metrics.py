"""Image-quality measures: PSNR, SSIM and relative mean-square errors."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DimensionMismatchError, InvalidArgumentError
from .grids import values_of

SSIM_WINDOW = 8
K1, K2 = 0.01, 0.03


def _pair(reference, candidate):
    ref = reference.as_array() if hasattr(reference, "as_array") else np.asarray(reference)
    cand = candidate.as_array() if hasattr(candidate, "as_array") else np.asarray(candidate)
    if ref.shape != cand.shape:
        raise DimensionMismatchError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    return ref, cand


def psnr(reference, candidate, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio ``10 log10(peak^2 / MSE)`` in dB.

    Identical inputs give ``math.inf``.
    """
    if peak <= 0:
        raise InvalidArgumentError("peak must be positive")
    ref, cand = _pair(reference, candidate)
    mse = float(np.mean((np.asarray(cand, dtype=float) - ref) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(reference, candidate, data_range: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over all ``window x window`` placements.

    Local statistics use uniform weights and population (biased) variances;
    ``C1 = (0.01 R)^2``, ``C2 = (0.03 R)^2``. Images smaller than the window
    along an axis are treated as a single window along that axis.
    """
    ref, cand = _pair(reference, candidate)
    ref = np.asarray(ref, dtype=float)
    cand = np.asarray(cand, dtype=float)
    if ref.ndim == 1:
        ref, cand = ref[None, :], cand[None, :]
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    w1, w2 = min(window, ref.shape[0]), min(window, ref.shape[1])

    def local_mean(a):
        m = uniform_filter(a, size=(w1, w2), mode="constant")
        # keep only placements fully inside the image
        o1, o2 = w1 // 2, w2 // 2
        return m[o1: o1 + a.shape[0] - w1 + 1, o2: o2 + a.shape[1] - w2 + 1]

    mx, my = local_mean(ref), local_mean(cand)
    vx = local_mean(ref * ref) - mx * mx
    vy = local_mean(cand * cand) - my * my
    cxy = local_mean(ref * cand) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def rel_mse(reference, candidate) -> float:
    """``||candidate - reference||^2 / ||reference||^2``."""
    ref = values_of(reference)
    cand = values_of(candidate)
    if ref.shape != cand.shape:
        raise DimensionMismatchError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    denom = float(np.vdot(ref, ref).real)
    if denom == 0:
        raise InvalidArgumentError("reference is zero")
    diff = cand - ref
    return float(np.vdot(diff, diff).real) / denom


def optimal_phase(reference, candidate) -> float:
    """Angle ``theta`` minimizing ``||e^{-i theta} candidate - reference||``."""
    return float(np.angle(np.vdot(reference, candidate)))


def phase_invariant_rel_mse(reference, candidate) -> float:
    """Relative MSE after removing the best global phase from ``candidate``.

    For real inputs this resolves the global sign.
    """
    ref = values_of(reference).astype(complex)
    cand = values_of(candidate).astype(complex)
    if ref.shape != cand.shape:
        raise DimensionMismatchError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    denom = float(np.vdot(ref, ref).real)
    if denom == 0:
        raise InvalidArgumentError("reference is zero")
    diff = cand * np.exp(-1j * optimal_phase(ref, cand)) - ref
    return float(np.vdot(diff, diff).real) / denom


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    rel_mse: float
    phase_invariant_rel_mse: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(reference, candidate, shape=None, data_range: float = 1.0) -> MetricReport:
    """All metrics at once; complex inputs are compared on magnitudes for PSNR/SSIM."""
    ref = values_of(reference)
    cand = values_of(candidate)
    if shape is None:
        shape = reference.shape if hasattr(reference, "as_array") or np.ndim(reference) == 2 else (1, ref.size)
    complex_case = np.iscomplexobj(ref) or np.iscomplexobj(cand)
    if complex_case:
        theta = optimal_phase(ref, cand)
        aligned = cand * np.exp(-1j * theta)
        mag_ref, mag_cand = np.abs(ref), np.abs(aligned)
        return MetricReport(psnr(mag_ref.reshape(shape), mag_cand.reshape(shape), data_range),
                            ssim(mag_ref.reshape(shape), mag_cand.reshape(shape), data_range),
                            rel_mse(ref, cand), phase_invariant_rel_mse(ref, cand))
    return MetricReport(psnr(ref.reshape(shape), cand.reshape(shape), data_range),
                        ssim(ref.reshape(shape), cand.reshape(shape), data_range),
                        rel_mse(ref, cand))

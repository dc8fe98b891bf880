"""Binary mask ensembles: dense random patterns and cyclic-shift (circulant) families."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError
from .grids import ImageGrid


@dataclass(frozen=True)
class MaskEnsemble:
    """``m`` masks over a ``d1 x d2`` subpixel grid.

    Dense storage keeps an ``(m, n)`` boolean pattern. Circulant storage keeps a
    ``(d1, d2)`` boolean kernel and an ``(m, 2)`` array of cyclic shifts; mask
    ``i`` is ``np.roll(kernel, shifts[i], axis=(0, 1))``. Open subpixels transmit
    ``open_value``, closed ones ``closed_value``.
    """

    d1: int
    d2: int
    storage: str
    pattern: np.ndarray | None = field(default=None, repr=False)
    kernel: np.ndarray | None = field(default=None, repr=False)
    shifts: np.ndarray | None = field(default=None, repr=False)
    open_value: float = 1.0
    closed_value: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.storage == "dense":
            pat = np.asarray(self.pattern, dtype=bool)
            if pat.ndim != 2 or pat.shape[1] != self.d1 * self.d2:
                raise DimensionMismatchError(f"dense pattern must be (m, {self.d1 * self.d2}), got {pat.shape}")
            pat.setflags(write=False)
            object.__setattr__(self, "pattern", pat)
        elif self.storage == "circulant":
            ker = np.asarray(self.kernel, dtype=bool)
            if ker.shape != (self.d1, self.d2):
                raise DimensionMismatchError(f"kernel must be {self.d1}x{self.d2}, got {ker.shape}")
            sh = np.asarray(self.shifts, dtype=np.int64).reshape(-1, 2)
            sh = np.stack([sh[:, 0] % self.d1, sh[:, 1] % self.d2], axis=1)
            ker.setflags(write=False)
            sh.setflags(write=False)
            object.__setattr__(self, "kernel", ker)
            object.__setattr__(self, "shifts", sh)
        else:
            raise InvalidArgumentError(f"unknown mask storage {self.storage!r}")
        if not self.open_value > self.closed_value >= 0:
            raise InvalidArgumentError("need open_value > closed_value >= 0")
        if self.open_value - self.closed_value > 1 + 1e-12:
            raise InvalidArgumentError("modulation depth must not exceed 1")

    @property
    def n(self) -> int:
        return self.d1 * self.d2

    @property
    def m(self) -> int:
        return self.pattern.shape[0] if self.storage == "dense" else self.shifts.shape[0]

    @property
    def depth(self) -> float:
        return self.open_value - self.closed_value

    def binary_pattern(self) -> np.ndarray:
        """Open/closed indicator as an ``(m, n)`` boolean matrix."""
        if self.storage == "dense":
            return self.pattern
        rows = [np.roll(self.kernel, tuple(s), axis=(0, 1)).ravel() for s in self.shifts]
        return np.array(rows, dtype=bool).reshape(self.m, self.n)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Transmission matrix with entries in ``{closed_value, open_value}``."""
        return np.where(self.binary_pattern(), self.open_value, self.closed_value)

    @cached_property
    def _kernel_fft(self):
        return np.fft.fft2(self.kernel.astype(float))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Mask sums ``A @ x`` for a real or complex flat image."""
        x = np.asarray(x).reshape(-1)
        if x.size != self.n:
            raise DimensionMismatchError(f"image has {x.size} subpixels, masks expect {self.n}")
        if self.storage == "dense":
            return _real_matmul(self.matrix, x)
        img = x.reshape(self.d1, self.d2)
        corr = np.fft.ifft2(np.fft.fft2(img) * np.conj(self._kernel_fft))
        vals = corr[self.shifts[:, 0], self.shifts[:, 1]]
        if not np.iscomplexobj(x):
            vals = vals.real
        return self.closed_value * x.sum() + self.depth * vals

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Back-projection ``A.T @ y``."""
        y = np.asarray(y).reshape(-1)
        if y.size != self.m:
            raise DimensionMismatchError(f"got {y.size} measurements, masks expect {self.m}")
        if self.storage == "dense":
            return _real_matmul(self.matrix.T, y)
        grid = np.zeros((self.d1, self.d2), dtype=y.dtype)
        np.add.at(grid, (self.shifts[:, 0], self.shifts[:, 1]), y)
        conv = np.fft.ifft2(np.fft.fft2(grid) * self._kernel_fft).ravel()
        if not np.iscomplexobj(y):
            conv = conv.real
        return self.closed_value * y.sum() + self.depth * conv


def _real_matmul(mat, x):
    # avoid upcasting the (possibly large) real matrix to complex
    if np.iscomplexobj(x):
        both = mat @ np.stack([x.real, x.imag], axis=1)
        return both[:, 0] + 1j * both[:, 1]
    return mat @ x


def generate_random_masks(m: int, d1: int, d2: int, open_probability: float = 0.5, seed: int = 0) -> MaskEnsemble:
    """Independent Bernoulli(open_probability) subpixels for each of ``m`` masks."""
    if m < 1:
        raise InvalidArgumentError("need at least one mask")
    if not 0 < open_probability < 1:
        raise InvalidArgumentError("open_probability must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    pattern = rng.random((m, d1 * d2)) < open_probability
    return MaskEnsemble(d1, d2, "dense", pattern=pattern, seed=seed)


def generate_circulant_masks(kernel: ImageGrid, shifts, m: int | None = None) -> MaskEnsemble:
    """Masks formed by cyclically shifting a binary kernel.

    ``shifts`` is a sequence of ``(dr, dc)`` pairs; they are reduced modulo the
    grid size and must be distinct after reduction.
    """
    ker = kernel.as_array()
    if not np.all((ker == 0) | (ker == 1)):
        raise InvalidArgumentError("circulant kernel must be binary")
    sh = np.asarray(shifts, dtype=np.int64).reshape(-1, 2)
    if m is not None and m != sh.shape[0]:
        raise InvalidArgumentError(f"m={m} but {sh.shape[0]} shifts given")
    reduced = {(int(a) % kernel.d1, int(b) % kernel.d2) for a, b in sh}
    if len(reduced) != sh.shape[0]:
        raise InvalidArgumentError("circulant shifts must be distinct")
    return MaskEnsemble(kernel.d1, kernel.d2, "circulant", kernel=ker.astype(bool), shifts=sh)


def random_circulant_masks(m: int, d1: int, d2: int, open_probability: float = 0.5, seed: int = 0) -> MaskEnsemble:
    """Random binary kernel with ``m`` distinct random cyclic shifts."""
    n = d1 * d2
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"circulant family supports 1 <= m <= {n}")
    if not 0 < open_probability < 1:
        raise InvalidArgumentError("open_probability must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    kernel = rng.random((d1, d2)) < open_probability
    flat = rng.permutation(n)[:m]
    shifts = np.stack([flat // d2, flat % d2], axis=1)
    masks = generate_circulant_masks(ImageGrid.from_array(kernel.astype(float)), shifts)
    return replace(masks, seed=seed)


def apply_modulation_depth(masks: MaskEnsemble, depth: float, offset: float = 0.0) -> MaskEnsemble:
    """Degrade the open/closed contrast: open -> offset + depth, closed -> offset."""
    if not 0 < depth <= 1:
        raise InvalidArgumentError("depth must lie in (0, 1]")
    if offset < 0 or offset + depth > 1 + 1e-12:
        raise InvalidArgumentError("need offset >= 0 and offset + depth <= 1")
    return replace(masks, open_value=offset + depth, closed_value=offset)

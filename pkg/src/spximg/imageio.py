"""Raster and mask-ensemble file formats.

* binary PGM (``P5``), 8 or 16 bit
* text float raster: a ``"d1 d2"`` header line followed by ``d1*d2`` decimals
* mask ensembles: header ``"m n storage seed"``, a line ``"d1 d2 open closed"``,
  then either one hex-packed bit row per mask (dense) or the kernel as ``d1``
  rows of ``0``/``1`` characters followed by ``m`` lines ``"dr dc"`` (circulant)
"""
from __future__ import annotations

import os

import numpy as np

from .errors import InvalidArgumentError
from .grids import ImageGrid
from .masks import MaskEnsemble


def write_pgm(path, image: ImageGrid, bits: int = 8, vmin: float | None = None, vmax: float | None = None):
    """Write ``image`` linearly mapped from ``[vmin, vmax]`` to the full integer range."""
    if bits not in (8, 16):
        raise InvalidArgumentError("PGM depth must be 8 or 16 bits")
    arr = image.as_array()
    lo = arr.min() if vmin is None else vmin
    hi = arr.max() if vmax is None else vmax
    maxval = 255 if bits == 8 else 65535
    scale = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
    q = np.rint(np.clip(scale, 0.0, 1.0) * maxval)
    data = q.astype(">u2" if bits == 16 else np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.d2} {image.d1}\n{maxval}\n".encode("ascii"))
        fh.write(data)


def _pgm_tokens(buf, count, pos):
    tokens = []
    while len(tokens) < count:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while buf[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> ImageGrid:
    """Read a binary PGM; values are returned scaled to ``[0, 1]``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = _pgm_tokens(buf, 4, 0)
    if tokens[0] != b"P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    return ImageGrid(height, width, data.astype(float) / maxval, nonneg=True)


def write_raster(path, image: ImageGrid):
    """Lossless text raster (``repr`` precision floats)."""
    lines = [f"{image.d1} {image.d2}"]
    arr = image.as_array()
    lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_raster(path) -> ImageGrid:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        values = np.array(fh.read().split(), dtype=float)
    if len(header) != 2:
        raise InvalidArgumentError(f"{path}: raster header must be 'd1 d2'")
    d1, d2 = int(header[0]), int(header[1])
    return ImageGrid(d1, d2, values)


def write_masks(path, masks: MaskEnsemble):
    seed = "-" if masks.seed is None else str(masks.seed)
    lines = [
        f"{masks.m} {masks.n} {masks.storage} {seed}",
        f"{masks.d1} {masks.d2} {masks.open_value!r} {masks.closed_value!r}",
    ]
    if masks.storage == "dense":
        packed = np.packbits(masks.pattern, axis=1)
        lines.extend(row.tobytes().hex() for row in packed)
    else:
        lines.extend("".join("1" if b else "0" for b in row) for row in masks.kernel)
        lines.extend(f"{dr} {dc}" for dr, dc in masks.shifts)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_masks(path) -> MaskEnsemble:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    m_str, n_str, storage, seed_str = lines[0].split()
    m, n = int(m_str), int(n_str)
    d1_str, d2_str, open_str, closed_str = lines[1].split()
    d1, d2 = int(d1_str), int(d2_str)
    if d1 * d2 != n:
        raise InvalidArgumentError(f"{path}: grid {d1}x{d2} does not match n={n}")
    seed = None if seed_str == "-" else int(seed_str)
    common = dict(open_value=float(open_str), closed_value=float(closed_str), seed=seed)
    body = lines[2:]
    if storage == "dense":
        rows = np.array([np.frombuffer(bytes.fromhex(r), dtype=np.uint8) for r in body[:m]])
        pattern = np.unpackbits(rows, axis=1, count=n).astype(bool)
        return MaskEnsemble(d1, d2, "dense", pattern=pattern, **common)
    if storage == "circulant":
        kernel = np.array([[c == "1" for c in r] for r in body[:d1]], dtype=bool)
        shifts = np.array([[int(t) for t in r.split()] for r in body[d1:d1 + m]], dtype=np.int64)
        return MaskEnsemble(d1, d2, "circulant", kernel=kernel, shifts=shifts.reshape(-1, 2), **common)
    raise InvalidArgumentError(f"{path}: unknown mask storage {storage!r}")

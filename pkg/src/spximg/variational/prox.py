"""Proximal operators of the simple convex functions used by the solvers.

Every operator ``h`` exposes ``h(v, step)`` returning
``argmin_x 1/2 ||x - v||^2 + step * h(x)``, ``h.value(x)``, and
``h.conj_prox(v, sigma)`` for the convex conjugate via Moreau's identity.
"""
from __future__ import annotations

import numpy as np

_FEAS_TOL = 1e-9


def prox_shrink(v, step, mode: str = "anisotropic"):
    """Soft shrinkage of a vector field.

    ``anisotropic`` shrinks each entry toward zero by ``step``. ``isotropic``
    scales each row (last axis) by ``max(1 - step / ||row||, 0)``; a zero row
    stays zero.
    """
    v = np.asarray(v, dtype=float)
    if mode == "anisotropic":
        return np.sign(v) * np.maximum(np.abs(v) - step, 0.0)
    if mode == "isotropic":
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(norms > 0, np.maximum(1.0 - step / norms, 0.0), 0.0)
        return factor * v
    raise ValueError(f"unknown shrinkage mode {mode!r}")


class Prox:
    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def __call__(self, v, step):
        raise NotImplementedError

    def conj_prox(self, v, sigma):
        return v - sigma * self(v / sigma, 1.0 / sigma)


class Zero(Prox):
    kind = "zero"

    def value(self, x):
        return 0.0

    def __call__(self, v, step):
        return v


class L1Norm(Prox):
    kind = "l1"

    def __init__(self, weight: float = 1.0):
        self.weight = weight

    def value(self, x):
        return self.weight * float(np.abs(x).sum())

    def __call__(self, v, step):
        return prox_shrink(v, step * self.weight, "anisotropic")

    def conj_prox(self, v, sigma):
        return np.clip(v, -self.weight, self.weight)


class GroupL2Norm(Prox):
    """Sum of Euclidean norms over consecutive groups of ``group`` entries."""

    kind = "l21"

    def __init__(self, weight: float = 1.0, group: int = 2):
        self.weight = weight
        self.group = group

    def value(self, x):
        return self.weight * float(np.linalg.norm(np.reshape(x, (-1, self.group)), axis=1).sum())

    def __call__(self, v, step):
        rows = np.reshape(v, (-1, self.group))
        return prox_shrink(rows, step * self.weight, "isotropic").ravel()

    def conj_prox(self, v, sigma):
        rows = np.reshape(v, (-1, self.group))
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        return (rows / np.maximum(1.0, norms / self.weight)).ravel()


class SquaredL2(Prox):
    """``weight/2 * ||x - offset||^2``."""

    kind = "sq_l2"

    def __init__(self, weight: float = 1.0, offset=None):
        self.weight = weight
        self.offset = offset

    def value(self, x):
        d = x if self.offset is None else x - self.offset
        return 0.5 * self.weight * float(np.vdot(d, d).real)

    def __call__(self, v, step):
        t = step * self.weight
        if self.offset is None:
            return v / (1.0 + t)
        return (v + t * self.offset) / (1.0 + t)


class Box(Prox):
    """Indicator of ``lower <= x <= upper`` (``None`` = unbounded side)."""

    kind = "box"

    def __init__(self, lower=None, upper=None):
        self.lower = lower
        self.upper = upper

    def value(self, x):
        if self.lower is not None and np.any(x < np.asarray(self.lower) - _FEAS_TOL):
            return np.inf
        if self.upper is not None and np.any(x > np.asarray(self.upper) + _FEAS_TOL):
            return np.inf
        return 0.0

    def __call__(self, v, step):
        if self.lower is None and self.upper is None:
            return v
        return np.clip(v, self.lower, self.upper)


def NonNegative():
    return Box(lower=0.0)


class Clipped(Prox):
    """Separable ``inner`` restricted to a box; prox is the clipped inner prox."""

    def __init__(self, inner: Prox, lower=None, upper=None):
        self.inner = inner
        self.box = Box(lower, upper)
        self.kind = f"{inner.kind}+box"

    def value(self, x):
        return self.inner.value(x) + self.box.value(x)

    def __call__(self, v, step):
        return self.box(self.inner(v, step), step)


class Scaled(Prox):
    """``h(z) = g(z / c)``, used when a linear block is rescaled by ``c``."""

    def __init__(self, inner: Prox, c: float):
        self.inner = inner
        self.c = c
        self.kind = inner.kind

    def value(self, z):
        return self.inner.value(z / self.c)

    def __call__(self, v, step):
        c = self.c
        return c * self.inner(v / c, step / (c * c))


class SeparableSum(Prox):
    """Block-separable sum over consecutive slices of a flat vector."""

    kind = "sum"

    def __init__(self, blocks):
        self.blocks = list(blocks)  # (size, prox) pairs
        self.bounds = np.cumsum([0] + [size for size, _ in self.blocks])

    def value(self, x):
        return sum(p.value(x[a:b]) for (_, p), a, b in zip(self.blocks, self.bounds[:-1], self.bounds[1:]))

    def __call__(self, v, step):
        return np.concatenate([p(v[a:b], step) for (_, p), a, b in zip(self.blocks, self.bounds[:-1], self.bounds[1:])])

    def conj_prox(self, v, sigma):
        return np.concatenate([p.conj_prox(v[a:b], sigma)
                               for (_, p), a, b in zip(self.blocks, self.bounds[:-1], self.bounds[1:])])

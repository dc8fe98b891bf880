"""Matrix-free linear maps on flat vectors, finite differences and norm estimates."""
from __future__ import annotations

import numpy as np


class LinearMap:
    """A linear operator given by an ``apply``/``adjoint`` pair on flat vectors."""

    def __init__(self, apply, adjoint, in_size: int, out_size: int, norm: float | None = None, name: str = ""):
        self._apply = apply
        self._adjoint = adjoint
        self.in_size = in_size
        self.out_size = out_size
        self._norm = norm
        self.name = name

    def __repr__(self):
        return f"LinearMap({self.name or '?'}: R^{self.in_size} -> R^{self.out_size})"

    def __call__(self, x):
        return self._apply(x)

    def apply(self, x):
        return self._apply(x)

    def adjoint(self, y):
        return self._adjoint(y)

    @property
    def T(self) -> "LinearMap":
        return LinearMap(self._adjoint, self._apply, self.out_size, self.in_size, self._norm, f"{self.name}^T")

    def norm(self) -> float:
        """Operator 2-norm; power-method estimate inflated by 1% unless given."""
        if self._norm is None:
            self._norm = 1.01 * power_norm(self)
        return self._norm

    def scaled(self, c: float) -> "LinearMap":
        norm = None if self._norm is None else abs(c) * self._norm
        return LinearMap(lambda x: c * self._apply(x), lambda y: c * self._adjoint(y),
                         self.in_size, self.out_size, norm, f"{c:g}*{self.name}")

    @classmethod
    def from_matrix(cls, mat, name: str = "matrix") -> "LinearMap":
        mat = np.asarray(mat)
        return cls(lambda x: mat @ x, lambda y: mat.conj().T @ y, mat.shape[1], mat.shape[0], name=name)

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls(lambda x: x, lambda y: y, n, n, norm=1.0, name="Id")

    @classmethod
    def from_sensing(cls, op) -> "LinearMap":
        """Wrap a linear-mode :class:`~spximg.sensing.SensingOperator` (or masks)."""
        apply = getattr(op, "linear_apply", None) or op.apply
        adjoint = getattr(op, "linear_adjoint", None) or op.adjoint
        return cls(apply, adjoint, op.n, op.m, name="A")


def power_norm(L: LinearMap, iters: int = 300, tol: float = 1e-9, seed: int = 0) -> float:
    """Largest singular value of ``L`` by power iteration on ``L^T L``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(L.in_size)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = L.adjoint(L.apply(v))
        if np.iscomplexobj(w):
            w = w.real
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(nrm - est) <= tol * nrm:
            est = nrm
            break
        est = nrm
    return float(np.sqrt(est))


def grad2d(image: np.ndarray) -> np.ndarray:
    """Forward differences with replicate (Neumann) boundary.

    Returns an array of shape ``(d1, d2, 2)``: ``[..., 0]`` differences along
    rows, ``[..., 1]`` along columns. Reshaped to ``(n, 2)`` its rows are the
    per-subpixel gradient vectors in row-major order.
    """
    u = np.asarray(image)
    g = np.zeros(u.shape + (2,), dtype=u.dtype)
    g[:-1, :, 0] = u[1:, :] - u[:-1, :]
    g[:, :-1, 1] = u[:, 1:] - u[:, :-1]
    return g


def div2d(field: np.ndarray) -> np.ndarray:
    """Discrete divergence, the negative adjoint of :func:`grad2d`."""
    p = field[..., 0]
    q = field[..., 1]
    d = np.zeros(p.shape, dtype=field.dtype)
    d[:-1, :] += p[:-1, :]
    d[1:, :] -= p[:-1, :]
    d[:, :-1] += q[:, :-1]
    d[:, 1:] -= q[:, :-1]
    return d


def gradient_map(d1: int, d2: int) -> LinearMap:
    n = d1 * d2
    return LinearMap(
        lambda x: grad2d(x.reshape(d1, d2)).ravel(),
        lambda q: -div2d(q.reshape(d1, d2, 2)).ravel(),
        n, 2 * n, name="grad",
    )


def field_gradient_map(d1: int, d2: int) -> LinearMap:
    """Full (non-symmetrized) gradient of a vector field ``(d1, d2, 2) -> (d1, d2, 2, 2)``."""
    n = d1 * d2

    def apply(w):
        w = w.reshape(d1, d2, 2)
        return np.stack([grad2d(w[..., 0]), grad2d(w[..., 1])], axis=2).ravel()

    def adjoint(h):
        h = h.reshape(d1, d2, 2, 2)
        return np.stack([-div2d(h[:, :, 0, :]), -div2d(h[:, :, 1, :])], axis=2).ravel()

    return LinearMap(apply, adjoint, 2 * n, 4 * n, name="grad_w")


def symmetrized_gradient_map(d1: int, d2: int) -> LinearMap:
    """Symmetrized gradient ``(Dw + Dw^T)/2`` stored as the full 2x2 block."""
    full = field_gradient_map(d1, d2)
    n = d1 * d2

    def sym(h):
        h = h.reshape(d1, d2, 2, 2)
        return (0.5 * (h + np.swapaxes(h, 2, 3))).ravel()

    return LinearMap(lambda w: sym(full.apply(w)), lambda h: full.adjoint(sym(h)), 2 * n, 4 * n, name="sym_grad_w")


def stack(maps, weights=None) -> LinearMap:
    """Vertical concatenation ``x -> [w_0 L_0 x, w_1 L_1 x, ...]``."""
    weights = [1.0] * len(maps) if weights is None else list(weights)
    in_size = maps[0].in_size
    sizes = [L.out_size for L in maps]
    bounds = np.cumsum([0] + sizes)

    def apply(x):
        return np.concatenate([w * L.apply(x) for L, w in zip(maps, weights)])

    def adjoint(y):
        out = None
        for L, w, a, b in zip(maps, weights, bounds[:-1], bounds[1:]):
            part = w * L.adjoint(y[a:b])
            out = part if out is None else out + part
        return out

    return LinearMap(apply, adjoint, in_size, int(bounds[-1]), name="stack")


def laplacian_eigenvalues(d1: int, d2: int) -> np.ndarray:
    """Eigenvalues of ``grad^T grad`` (Neumann) in the DCT-II basis, shape ``(d1, d2)``."""
    e1 = 4.0 * np.sin(np.pi * np.arange(d1) / (2.0 * d1)) ** 2
    e2 = 4.0 * np.sin(np.pi * np.arange(d2) / (2.0 * d2)) ** 2
    return e1[:, None] + e2[None, :]

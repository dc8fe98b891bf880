"""Reconstruction solvers built on the primal-dual engine."""
from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..errors import InvalidArgumentError
from ..report import RunReport
from .linops import (
    LinearMap,
    field_gradient_map,
    gradient_map,
    stack,
    symmetrized_gradient_map,
)
from .pdhg import SolverSpec, pdhg_solve
from .prox import (
    Box,
    Clipped,
    GroupL2Norm,
    L1Norm,
    Scaled,
    SeparableSum,
    SquaredL2,
    Zero,
)

_SQRT8 = np.sqrt(8.0)


def _as_map(A) -> LinearMap:
    if isinstance(A, LinearMap):
        return A
    if isinstance(A, np.ndarray):
        return LinearMap.from_matrix(A)
    return LinearMap.from_sensing(A)


def _tv_prox(weight, isotropic, group=2):
    return GroupL2Norm(weight, group) if isotropic else L1Norm(weight)


def tv_value(image, isotropic: bool = True) -> float:
    """Discrete total variation of a 2D array (unit weight)."""
    d1, d2 = image.shape
    g = gradient_map(d1, d2).apply(np.ravel(image))
    return _tv_prox(1.0, isotropic).value(g)


def tv_denoise(f, weight: float, isotropic: bool = True, lower=None, upper=None,
               max_iters: int = 300, tol: float = 1e-5, x0=None):
    """ROF denoising ``argmin_x 1/2||x - f||^2 + weight * TV(x)`` with optional bounds.

    ``f`` is a 2D array; the result has the same shape.
    """
    f = np.asarray(f, dtype=float)
    d1, d2 = f.shape
    if weight <= 0:
        return np.clip(f, lower, upper) if (lower is not None or upper is not None) else f.copy()
    grad = gradient_map(d1, d2)
    grad._norm = _SQRT8
    F = Clipped(SquaredL2(1.0, f.ravel()), lower, upper)
    G = _tv_prox(weight, isotropic)
    tau = 1.0 / _SQRT8
    x, _ = pdhg_solve(F, G, grad, x0=f.ravel() if x0 is None else np.ravel(x0), gamma=0.5,
                      max_iters=max_iters, tol=tol, tau=tau, sigma=1.0 / (tau * 8.0), record=False, name="tv_denoise")
    return x.reshape(d1, d2)


def _data_block(A: LinearMap, y):
    c = 1.0 / A.norm()
    return A.scaled(c), Scaled(SquaredL2(1.0, np.asarray(y, dtype=float)), c), c


def solve_nnls(A, y, spec: SolverSpec | None = None, *, x0=None, return_report: bool = False):
    """Non-negative least squares ``min_{x>=0} ||y - A x||^2``.

    Runs the primal-dual engine with the data misfit on the dual side. Stops on
    the relative-change tolerance or when the complementarity residual
    ``||min(x, A^T(Ax - y))||_inf`` drops below ``spec.tol`` relative to
    ``||A^T y||_inf``.
    """
    spec = spec or SolverSpec(kind="nnls", lam=1.0, nonneg=True)
    A = _as_map(A)
    y = np.asarray(y, dtype=float)
    L, G, c = _data_block(A, y)
    F = Box(lower=0.0)
    scale = max(np.abs(A.adjoint(y)).max(), 1e-300)

    def kkt(x):
        grad = A.adjoint(A.apply(x) - y)
        return np.abs(np.minimum(x, grad)).max() / scale

    x0 = None if x0 is None else np.maximum(np.asarray(x0, dtype=float), 0.0)
    x, report = pdhg_solve(F, G, L, spec, x0=x0, residual=lambda x_, Lx: np.linalg.norm(Lx / c - y),
                           stop_check=lambda x_: kkt(x_) <= spec.tol, name="nnls")
    report.objective = [2.0 * v for v in report.objective]
    report.parameters.update(spec.to_dict())
    report.extras["kkt_residual"] = float(kkt(x))
    return (x, report) if return_report else x


def _regularizer_blocks(spec: SolverSpec, d1: int, d2: int, n: int):
    """Linear blocks, their dual-side functions, and the primal function."""
    lam = spec.lam
    lower = 0.0 if spec.nonneg else None
    if spec.kind == "tikhonov":
        return [], [], Clipped(SquaredL2(lam), lower, None), n
    if spec.kind == "l1":
        return [], [], Clipped(L1Norm(lam), lower, None), n
    if spec.kind == "tv":
        grad = gradient_map(d1, d2)
        c = 1.0 / _SQRT8
        return [grad.scaled(c)], [Scaled(_tv_prox(lam, spec.isotropic), c)], Box(lower=lower), n
    if spec.kind == "tgv":
        grad = gradient_map(d1, d2)
        wgrad = (symmetrized_gradient_map if spec.symmetrized else field_gradient_map)(d1, d2)

        def couple(z):
            return grad.apply(z[:n]) - z[n:]

        def couple_adj(q):
            return np.concatenate([grad.adjoint(q), -q])

        coupling = LinearMap(couple, couple_adj, 3 * n, 2 * n, norm=_SQRT8 + 1.0, name="grad_x-w")
        field = LinearMap(lambda z: wgrad.apply(z[n:]), lambda h: np.concatenate([np.zeros(n), wgrad.adjoint(h)]),
                          3 * n, 4 * n, norm=_SQRT8, name="grad_w")
        c1, c2 = 1.0 / (_SQRT8 + 1.0), 1.0 / _SQRT8
        g1 = Scaled(_tv_prox(lam, spec.isotropic, 2), c1)
        g2 = Scaled(_tv_prox(lam * spec.beta, spec.isotropic, 4), c2)
        F = SeparableSum([(n, Box(lower=lower)), (2 * n, Zero())])
        return [coupling.scaled(c1), field.scaled(c2)], [g1, g2], F, 3 * n
    raise InvalidArgumentError(f"solve_penalized does not handle kind {spec.kind!r}")


def solve_penalized(A, y, spec: SolverSpec, shape=None, *, x0=None, y0=None):
    """Penalized reconstruction ``min_x 1/2||y - A x||^2 + lam * R(x)``.

    ``R`` is ``||x||^2/2`` (Tikhonov), ``||x||_1``, the anisotropic or isotropic
    TV, or TGV ``||grad x - w|| + beta ||grad w||`` over the joint variable
    ``(x, w)``. ``shape`` is the ``(d1, d2)`` raster, needed for TV/TGV.

    Returns the image (flat) and a :class:`RunReport`; for TGV the auxiliary
    field is in ``report.state["w"]``.
    """
    A = _as_map(A)
    y = np.asarray(y, dtype=float)
    n = A.in_size
    if shape is None:
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise InvalidArgumentError("shape is required for non-square rasters")
        shape = (side, side)
    d1, d2 = shape
    data_L, data_G, c = _data_block(A, y)
    blocks, gs, F, size = _regularizer_blocks(spec, d1, d2, n)
    if size != n:
        image_L = data_L
        data_L = LinearMap(lambda z: image_L.apply(z[:n]),
                           lambda v: np.concatenate([image_L.adjoint(v), np.zeros(size - n)]),
                           size, A.out_size, norm=image_L.norm())
    Ls = [data_L] + blocks
    L = stack(Ls)
    L._norm = float(np.sqrt(sum(Li.norm() ** 2 for Li in Ls)))
    offsets = np.cumsum([0] + [Li.out_size for Li in Ls])
    G = SeparableSum([(Li.out_size, gi) for Li, gi in zip(Ls, [data_G] + gs)])
    z0 = None
    if x0 is not None:
        z0 = np.zeros(size)
        z0[: np.size(x0)] = np.ravel(x0)
    z, report = pdhg_solve(F, G, L, spec, x0=z0, y0=y0,
                           residual=lambda z_, Lz: np.linalg.norm(Lz[: offsets[1]] / c - y),
                           name=spec.kind)
    x = z[:n]
    if size != n:
        report.state["w"] = z[n:]
    report.parameters.update(spec.to_dict())
    report.image = x
    return x, report


def bregman_iterate(A, y, spec: SolverSpec, K: int, shape=None):
    """Bregman iteration in its augmented-Lagrangian form.

    Each outer step solves the penalized problem with weight ``K * spec.lam``
    on the data ``y + r_k`` and then accumulates the residual,
    ``r_{k+1} = r_k + y - A x_{k+1}``. Returns all outer iterates and a report
    whose ``residual`` history holds ``||y - A x_k||`` per outer step.
    """
    if K < 1:
        raise InvalidArgumentError("K must be at least 1")
    A = _as_map(A)
    y = np.asarray(y, dtype=float)
    inner = replace(spec, lam=K * spec.lam)
    r = np.zeros_like(y)
    iterates = []
    report = RunReport(solver=f"bregman-{spec.kind}", parameters={**spec.to_dict(), "K": K, "lam_tilde": inner.lam})
    start = time.perf_counter()
    x_prev, dual = None, None
    for _ in range(K):
        x, sub = solve_penalized(A, y + r, inner, shape, x0=x_prev, y0=dual)
        dual = sub.state["dual"]
        res = y - A.apply(x)
        r = r + res
        iterates.append(x)
        report.record(sub.objective[-1] if sub.objective else np.nan, np.linalg.norm(res),
                      np.linalg.norm(x - x_prev) / max(np.linalg.norm(x), 1e-12) if x_prev is not None else 1.0)
        x_prev = x
    report.wall_time = time.perf_counter() - start
    report.converged = True
    report.image = iterates[-1]
    return iterates, report

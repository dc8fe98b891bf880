"""Starting points for the phase-retrieval flows."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import InvalidArgumentError
from .problem import PhaseProblem


class InitWarning(UserWarning):
    pass


def _scale_to_data(problem: PhaseProblem, v) -> np.ndarray:
    # choose ||x|| so that mean |B x|^2 equals mean(y)
    energy = float(np.sum(np.abs(problem.apply(v)) ** 2))
    if energy == 0:
        return v
    return v * np.sqrt(problem.y.sum() / energy)


def _random_unit(problem: PhaseProblem, rng) -> np.ndarray:
    v = rng.standard_normal(problem.n)
    if not problem.is_real:
        v = v + 1j * rng.standard_normal(problem.n)
    return v / np.linalg.norm(v)


def power_method(apply, v0, iters: int = 200, tol: float = 1e-8):
    """Leading eigenvector of a Hermitian PSD operator.

    Returns ``(v, eigenvalue, converged)``; stops when
    ``||M v - (v^H M v) v|| <= tol * |v^H M v|``.
    """
    v = v0 / np.linalg.norm(v0)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        lam = float(np.vdot(v, w).real)
        if np.linalg.norm(w - lam * v) <= tol * abs(lam):
            return v, lam, True
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return v, 0.0, False
        v = w / nrm
    return v, lam, False


def random_init(problem: PhaseProblem, seed: int = 0) -> np.ndarray:
    """Gaussian direction with norm ``sqrt(n * mean(y) / mean ||B_i||^2)``.

    This is the norm of a signal whose energy spreads evenly over the rows; a
    random direction hardly sees the dominant row mean of non-negative masks,
    so matching ``mean |B x0|^2`` would inflate it.
    """
    v = _random_unit(problem, np.random.default_rng(seed))
    norms = problem.row_norms_squared
    return v * np.sqrt(problem.n * problem.y.mean() / max(norms.mean(), 1e-300))


def spectral_init(problem: PhaseProblem, seed: int = 0, iters: int = 200, tol: float = 1e-8,
                  return_info: bool = False):
    """Leading eigenvector of ``M0 = sum_i y_i B_i^H B_i`` by the power method.

    In the real model the real part of ``M0`` is used. The eigenvector is
    scaled so that ``mean |B x0|^2 = mean(y)``. If the power method does not
    settle within ``iters`` the last iterate is returned and an
    :class:`InitWarning` is issued.
    """
    y = problem.y
    if not np.any(y > 0):
        raise InvalidArgumentError("spectral initialization needs some positive intensity")

    def m0(v):
        return problem.project(problem.adjoint(y * problem.apply(v)))

    v, lam, ok = power_method(m0, _random_unit(problem, np.random.default_rng(seed)), iters, tol)
    if not ok:
        warnings.warn("spectral initialization: power method did not converge", InitWarning, stacklevel=2)
    x0 = _scale_to_data(problem, v)
    return (x0, {"eigenvalue": lam, "converged": ok}) if return_info else x0


def orthogonality_init(problem: PhaseProblem, fraction: float = 5.0 / 6.0, seed: int = 0, iters: int = 200,
                       tol: float = 1e-8, return_info: bool = False):
    """Orthogonality-promoting start.

    Rows are ranked by ``y_i / ||B_i||^2``. The ``fraction`` of rows with the
    smallest ratios form the set the start should be nearly orthogonal to;
    as an approximation the leading eigenvector of
    ``sum_{i in S} B_i^H B_i / ||B_i||^2`` over the remaining rows ``S`` is
    returned, scaled like :func:`spectral_init`. All-equal ratios carry no
    ranking information and fall back to the spectral start with a warning.
    """
    if not 0 < fraction < 1:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    norms = problem.row_norms_squared
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(norms > 0, problem.y / norms, 0.0)
    keep = int(round((1.0 - fraction) * problem.m))
    if keep < 1:
        raise InvalidArgumentError(f"fraction {fraction} leaves no rows for the orthogonality start")
    if np.ptp(ratio) <= 1e-12 * max(abs(ratio).max(), 1e-300):
        warnings.warn("orthogonality initialization: all ratios equal, using spectral start", InitWarning,
                      stacklevel=2)
        return spectral_init(problem, seed, iters, tol, return_info)
    # stable sort keeps the selection deterministic under ties
    order = np.argsort(-ratio, kind="stable")
    selected = np.zeros(problem.m, dtype=bool)
    selected[order[:keep]] = True
    weights = np.where(selected & (norms > 0), 1.0 / np.where(norms > 0, norms, 1.0), 0.0)

    def mtilde(v):
        return problem.project(problem.adjoint(weights * problem.apply(v)))

    v, lam, ok = power_method(mtilde, _random_unit(problem, np.random.default_rng(seed)), iters, tol)
    if not ok:
        warnings.warn("orthogonality initialization: power method did not converge", InitWarning, stacklevel=2)
    x0 = _scale_to_data(problem, v)
    info = {"eigenvalue": lam, "converged": ok, "selected": int(selected.sum())}
    return (x0, info) if return_info else x0


def initialize(problem: PhaseProblem, kind: str, seed: int = 0, fraction: float = 5.0 / 6.0,
               iters: int = 200) -> np.ndarray:
    if kind == "random":
        return random_init(problem, seed)
    if kind == "spectral":
        return spectral_init(problem, seed, iters)
    if kind == "orthogonality":
        return orthogonality_init(problem, fraction, seed, iters)
    raise InvalidArgumentError(f"unknown init {kind!r}")

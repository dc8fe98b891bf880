"""Intensity-measurement problems ``y = |B x|^2`` and their derivatives."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from ..errors import DimensionMismatchError, InvalidArgumentError
from ..sensing import SensingOperator
from ..variational.linops import LinearMap, power_norm

# materialize B when it has at most this many entries
DENSE_LIMIT = 2.0e7
MODELS = ("real", "complex")
INIT_KINDS = ("random", "spectral", "orthogonality")


class PhaseProblem:
    """Measurements ``y`` of ``|B x|^2`` with a real or complex signal model.

    ``B`` is a :class:`SensingOperator` (its linear map is used whatever its
    mode) or an explicit ``m x n`` matrix. In the real model iterates stay real
    and every back-projection keeps only its real part.
    """

    def __init__(self, B, y, model: str = "real", shape=None):
        if model not in MODELS:
            raise InvalidArgumentError(f"unknown signal model {model!r}")
        self.model = model
        y = np.asarray(y, dtype=float).reshape(-1)
        if np.any(y < 0):
            raise InvalidArgumentError("intensities must be non-negative")
        if isinstance(B, SensingOperator):
            self.m, self.n = B.m, B.n
            self.shape = B.shape if shape is None else tuple(shape)
            self._apply, self._adjoint = B.linear_apply, B.linear_adjoint
            self._dense = B.matrix() if B.m * B.n <= DENSE_LIMIT else None
        else:
            mat = np.asarray(B)
            if mat.ndim != 2:
                raise InvalidArgumentError("B must be a 2D matrix or a SensingOperator")
            self.m, self.n = mat.shape
            self.shape = (1, self.n) if shape is None else tuple(shape)
            self._dense = mat
        if y.size != self.m:
            raise DimensionMismatchError(f"{y.size} intensities for {self.m} measurement rows")
        if self._dense is not None:
            self._dense_h = self._dense.conj().T
        self.y = y

    @property
    def is_real(self) -> bool:
        return self.model == "real"

    def project(self, v):
        """Map a back-projection onto the signal space of the model."""
        return v.real.copy() if self.is_real else v

    def apply(self, x) -> np.ndarray:
        return self._dense @ x if self._dense is not None else self._apply(x)

    def adjoint(self, v) -> np.ndarray:
        return self._dense_h @ v if self._dense is not None else self._adjoint(v)

    def with_data(self, y) -> "PhaseProblem":
        new = object.__new__(PhaseProblem)
        new.__dict__.update(self.__dict__)
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.m:
            raise DimensionMismatchError("data length changed")
        new.y = y
        return new

    @cached_property
    def row_norms_squared(self) -> np.ndarray:
        if self._dense is not None:
            return np.sum(np.abs(self._dense) ** 2, axis=1)
        return np.array([np.linalg.norm(self.adjoint(e)) ** 2 for e in np.eye(self.m)])

    @cached_property
    def lambda_max(self) -> float:
        """Largest eigenvalue of ``B^H B`` (power method)."""
        L = LinearMap(self.apply, lambda v: self.adjoint(v), self.n, self.m)
        return power_norm(L) ** 2

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n, dtype=float if self.is_real else complex)


@dataclass(frozen=True)
class FlowSpec:
    """Iteration settings shared by the phase-retrieval solvers.

    ``mu_max=None`` sets the Wirtinger-flow ceiling from a curvature estimate at
    ``x0``; ``taf_mu`` is the amplitude-flow step as a fraction of
    ``1 / lambda_max(B^H B)``. ``reg_lambda`` weights the TV backward step of the
    regularized flows; its per-iteration weight is ``reg_lambda * mu_k``.
    """

    max_iters: int = 500
    tol: float = 1e-12
    mu_max: float | None = None
    k0: float = 330.0
    taf_mu: float = 1.0
    gamma: float = 0.7
    lm_alpha0: float | None = None
    lm_decay: float = 0.5
    lm_inflate: float = 4.0
    lm_max_rejections: int = 20
    lm_solver: str = "auto"
    cg_iters: int = 200
    cg_tol: float = 1e-10
    init: str = "spectral"
    orth_fraction: float = 5.0 / 6.0
    power_iters: int = 200
    reg: str = "none"
    reg_lambda: float = 0.0
    reg_inner_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be at least 1")
        if self.gamma <= 0:
            raise InvalidArgumentError("gamma must be positive")
        if self.k0 <= 0:
            raise InvalidArgumentError("k0 must be positive")
        if self.lm_alpha0 is not None and self.lm_alpha0 <= 0:
            raise InvalidArgumentError("lm_alpha0 must be positive")
        if not 0 < self.lm_decay < 1 or self.lm_inflate <= 1:
            raise InvalidArgumentError("damping must decay on acceptance and grow on rejection")
        if self.lm_solver not in ("auto", "cg", "direct"):
            raise InvalidArgumentError(f"unknown lm_solver {self.lm_solver!r}")
        if self.init not in INIT_KINDS:
            raise InvalidArgumentError(f"unknown init {self.init!r}; expected one of {INIT_KINDS}")
        if not 0 < self.orth_fraction < 1:
            raise InvalidArgumentError("orth_fraction must lie in (0, 1)")
        if self.reg not in ("none", "tv"):
            raise InvalidArgumentError(f"unknown regularizer {self.reg!r}")
        if self.reg_lambda < 0:
            raise InvalidArgumentError("reg_lambda must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class Residual(NamedTuple):
    value: float
    residuals: np.ndarray
    amplitude: np.ndarray


def intensity_residual(problem: PhaseProblem, x, z=None) -> Residual:
    """``L(x) = ||y - |Bx|^2||^2``, the residuals ``|Bx|^2 - y`` and ``sqrt(y) - |Bx|``.

    ``z = Bx`` may be passed when already known.
    """
    x = np.asarray(x)
    if x.size != problem.n:
        raise DimensionMismatchError(f"signal has {x.size} entries, problem expects {problem.n}")
    z = problem.apply(x) if z is None else z
    mag2 = np.abs(z) ** 2
    res = mag2 - problem.y
    return Residual(float(res @ res), res, np.sqrt(problem.y) - np.sqrt(mag2))


def intensity_gradient(problem: PhaseProblem, x, z=None) -> np.ndarray:
    """Gradient of ``L`` in real coordinates, ``4 B^H((|Bx|^2 - y) * Bx)``.

    For complex signals the real and imaginary parts of the result are the
    partial derivatives along the real and imaginary parts of ``x``; the
    Wirtinger derivative ``dL/d conj(x)`` is half of it.
    """
    z = problem.apply(x) if z is None else z
    return 4.0 * problem.project(problem.adjoint((np.abs(z) ** 2 - problem.y) * z))


def wirtinger_gradient(problem: PhaseProblem, x, z=None) -> np.ndarray:
    """``sum_i 2(|B_i x|^2 - y_i) B_i^H B_i x``."""
    return 0.5 * intensity_gradient(problem, x, z)


def jacobian_apply(problem: PhaseProblem, x, v) -> np.ndarray:
    """Derivative of ``x -> |Bx|^2`` at ``x`` applied to ``v``: ``2 Re(conj(Bx) * Bv)``."""
    return 2.0 * np.real(np.conj(problem.apply(x)) * problem.apply(v))


def jacobian_adjoint(problem: PhaseProblem, x, u) -> np.ndarray:
    """Adjoint of :func:`jacobian_apply` for the real inner product ``Re<a, b>``."""
    return 2.0 * problem.project(problem.adjoint(problem.apply(x) * np.asarray(u, dtype=float)))


def taf_update(problem: PhaseProblem, x, mu: float, gamma: float, z=None):
    """Truncated amplitude-flow increment and its index set.

    Returns ``(mu * sum_{i in I} (sqrt(y_i)/|B_i x| - 1) B_i^H B_i x, I)`` with
    ``I = {i : sqrt(y_i)/|B_i x| <= 1 + gamma}``; rows with ``B_i x = 0`` have
    an infinite ratio and are never selected.
    """
    z = problem.apply(x) if z is None else z
    mag = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mag > 0, np.sqrt(problem.y) / mag, np.inf)
    keep = ratio <= 1.0 + gamma
    weights = np.where(keep, ratio - 1.0, 0.0)
    return mu * problem.project(problem.adjoint(weights * z)), keep


def mu_schedule(k: int, mu_max: float, k0: float) -> float:
    """Ramped step ``mu_k = mu_max (1 - exp(-k / k0))``."""
    return mu_max * (1.0 - np.exp(-k / k0))

"""First-order primal-dual engine for ``min_x F(x) + G(L x)``."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DivergenceError, InvalidArgumentError
from ..report import RunReport
from .linops import LinearMap
from .prox import Prox

SOLVER_KINDS = ("nnls", "tikhonov", "l1", "tv", "tgv")


@dataclass(frozen=True)
class SolverSpec:
    """Reconstruction settings.

    ``lam`` weights the regularizer in ``1/2||y - A x||^2 + lam * R(x)``;
    ``beta`` is the TGV weight on the gradient of the auxiliary field. When
    ``tau``/``sigma`` are left as ``None`` they are set to ``1/||L||``.
    """

    kind: str = "tv"
    lam: float = 0.1
    beta: float = 2.0
    isotropic: bool = True
    nonneg: bool = False
    max_iters: int = 2000
    tau: float | None = None
    sigma: float | None = None
    tol: float = 1e-6
    symmetrized: bool = False

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise InvalidArgumentError(f"unknown solver kind {self.kind!r}; expected one of {SOLVER_KINDS}")
        if self.kind != "nnls" and self.lam <= 0:
            raise InvalidArgumentError("lam must be positive")
        if self.kind == "tgv" and self.beta <= 0:
            raise InvalidArgumentError("beta must be positive")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


def check_steps(tau: float, sigma: float, norm: float):
    if tau <= 0 or sigma <= 0:
        raise InvalidArgumentError("step sizes must be positive")
    if tau * sigma * norm**2 > 1.0 + 1e-9:
        raise InvalidArgumentError(f"step condition violated: tau*sigma*||L||^2 = {tau * sigma * norm**2:.4g} > 1")


def pdhg_solve(
    f: Prox,
    g: Prox,
    L: LinearMap,
    spec: SolverSpec | None = None,
    *,
    x0=None,
    y0=None,
    gamma: float = 0.0,
    residual=None,
    max_iters: int | None = None,
    tol: float | None = None,
    tau: float | None = None,
    sigma: float | None = None,
    record: bool = True,
    stop_check=None,
    check_every: int = 50,
    name: str = "pdhg",
):
    """Chambolle-Pock iteration with over-relaxation ``theta = 1``.

    Parameters
    ----------
    f, g : Prox
        Primal and dual-side functions; ``g`` is accessed through its conjugate.
    L : LinearMap
    spec : SolverSpec, optional
        Supplies ``max_iters``, ``tol``, ``tau`` and ``sigma`` defaults.
    gamma : float
        Strong-convexity modulus of ``f``; when positive the accelerated step
        rule is used.
    residual : callable, optional
        ``residual(x, Lx)`` recorded each iteration (e.g. data misfit).
    stop_check : callable, optional
        ``stop_check(x) -> bool`` evaluated every ``check_every`` iterations;
        returning True ends the run as converged.

    Returns
    -------
    x : ndarray
    report : RunReport
        Objective ``F(x) + G(Lx)``, residual and relative change per iteration;
        the final dual variable is in ``report.state["dual"]``.
    """
    spec = spec or SolverSpec()
    max_iters = spec.max_iters if max_iters is None else max_iters
    tol = spec.tol if tol is None else tol
    tau = spec.tau if tau is None else tau
    sigma = spec.sigma if sigma is None else sigma
    norm = L.norm()
    if tau is None and sigma is None:
        tau = sigma = 1.0 / norm
    elif tau is None:
        tau = 1.0 / (sigma * norm**2)
    elif sigma is None:
        sigma = 1.0 / (tau * norm**2)
    check_steps(tau, sigma, norm)

    report = RunReport(solver=name, parameters={"tau": tau, "sigma": sigma, "gamma": gamma, "max_iters": max_iters,
                                                "tol": tol})
    start = time.perf_counter()
    x = np.zeros(L.in_size) if x0 is None else np.array(x0, dtype=float)
    y = np.zeros(L.out_size) if y0 is None else np.array(y0, dtype=float)
    Lx = L.apply(x)
    Lx_bar = Lx
    initial = f.value(x) + g.value(Lx)
    # warm starts may begin near the optimum; guard against the cold-start level too
    zero = np.zeros(L.in_size)
    reference = max(v for v in (initial, f.value(zero) + g.value(L.apply(zero)), 0.0) if np.isfinite(v))
    for k in range(max_iters):
        y_new = g.conj_prox(y + sigma * Lx_bar, sigma)
        x_new = f(x - tau * L.adjoint(y_new), tau)
        theta = 1.0
        if gamma > 0:
            theta = 1.0 / np.sqrt(1.0 + 2.0 * gamma * tau)
            tau, sigma = theta * tau, sigma / theta
        Lx_new = L.apply(x_new)
        Lx_bar = Lx_new + theta * (Lx_new - Lx)
        dx = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-12)
        dy = np.linalg.norm(y_new - y) / max(np.linalg.norm(y_new), 1e-12)
        x, y, Lx = x_new, y_new, Lx_new
        if record:
            obj = f.value(x) + g.value(Lx)
            res = residual(x, Lx) if residual is not None else np.nan
            report.record(obj, res, dx)
            if not np.isfinite(obj) or (reference > 0 and obj > 10.0 * reference):
                report.wall_time = time.perf_counter() - start
                report.message = f"objective grew from {reference:.4g} to {obj:.4g} at iteration {k + 1}"
                raise DivergenceError(report.message, iterate=x, report=report)
        if max(dx, dy) < tol and k > 0:
            report.converged = True
            break
        if stop_check is not None and (k + 1) % check_every == 0 and stop_check(x):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - start
    report.message = "converged" if report.converged else "max_iters reached"
    report.state["dual"] = y
    report.image = x
    return x, report

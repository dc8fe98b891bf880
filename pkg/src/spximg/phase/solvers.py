"""Phase-retrieval iterations: Fienup, Levenberg-Marquardt, Wirtinger and amplitude flows."""
from __future__ import annotations

import math
import time

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr, solve_triangular

from ..errors import DivergenceError, InvalidArgumentError
from ..report import RunReport
from ..variational.solvers import tv_denoise
from .init import initialize
from .problem import (
    FlowSpec,
    PhaseProblem,
    intensity_gradient,
    intensity_residual,
    jacobian_adjoint,
    jacobian_apply,
    mu_schedule,
    taf_update,
    wirtinger_gradient,
)

PINV_LIMIT = 4096


def _rdot(a, b) -> float:
    # real inner product on R^n or C^n viewed as R^{2n}
    return float(np.vdot(a, b).real)


def real_cg(apply, b, x0=None, tol: float = 1e-10, max_iters: int = 200):
    """Conjugate gradients for a symmetric positive definite map under ``Re<a, b>``.

    Works for maps that are only real-linear on complex vectors. Returns
    ``(x, iterations, ok)``; ``ok`` is False on breakdown (non-positive
    curvature or non-finite values).
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = _rdot(r, r)
    target = tol * tol * max(_rdot(b, b), 1e-300)
    for k in range(max_iters):
        if rr <= target:
            return x, k, True
        Ap = apply(p)
        curv = _rdot(p, Ap)
        if not np.isfinite(curv) or curv <= 0:
            return x, k, False
        a = rr / curv
        x = x + a * p
        r = r - a * Ap
        rr_new = _rdot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, max_iters, bool(np.all(np.isfinite(x)))


def _start(problem: PhaseProblem, x0, spec: FlowSpec):
    if x0 is None:
        x0 = initialize(problem, spec.init, spec.seed, spec.orth_fraction, spec.power_iters)
    x = np.array(x0, dtype=float if problem.is_real else complex).reshape(-1)
    if x.size != problem.n:
        raise InvalidArgumentError(f"x0 has {x.size} entries, problem expects {problem.n}")
    return x


def _finish(report: RunReport, x, start):
    report.wall_time = time.perf_counter() - start
    report.image = x
    if not report.message:
        report.message = "converged" if report.converged else "max_iters reached"
    return x, report


# ---------------------------------------------------------------------------
# Fienup / Gerchberg-Saxton


class _PseudoInverse:
    """Apply ``B^+``: QR factors of the dense ``B`` when small, CG on the normal equations otherwise."""

    def __init__(self, problem: PhaseProblem, tol: float, max_iters: int):
        self.problem = problem
        self.tol, self.max_iters = tol, max_iters
        self.factors = None
        if problem._dense is not None and problem.n <= PINV_LIMIT:
            self.factors = getattr(problem, "_qr", None)
            if self.factors is None:
                B = problem._dense
                tall = problem.m >= problem.n
                q, r = qr(B if tall else problem._dense_h, mode="economic")
                self.factors = (tall, q, r)
                problem._qr = self.factors

    def __call__(self, v, x0):
        if self.factors is not None:
            tall, q, r = self.factors
            if tall:
                # least-squares solution R^{-1} Q^H v
                return solve_triangular(r, q.conj().T @ v, check_finite=False)
            # minimum-norm solution Q R^{-H} v of the wide system
            return q @ solve_triangular(r, v, trans="C", check_finite=False)
        p = self.problem
        x, _, _ = real_cg(lambda u: p.adjoint(p.apply(u)), p.adjoint(v).astype(complex),
                          np.asarray(x0, dtype=complex), self.tol, self.max_iters)
        return x


def fienup_gs(problem: PhaseProblem, x0=None, iters: int | None = None, spec: FlowSpec | None = None):
    """Magnitude substitution followed by a least-squares back-projection.

    ``v = sqrt(y) * Bx / |Bx|`` (ratio 1 where ``Bx = 0``), then
    ``x = B^+ v``; in the real model ``x = Re(B^+ v)``. ``B^+`` is applied
    through a QR factorization of ``B`` (or ``B^H`` when ``m < n``) for small
    problems and by a conjugate-gradient normal-equation solve otherwise.
    """
    spec = spec or FlowSpec()
    iters = spec.max_iters if iters is None else iters
    x = _start(problem, x0, spec)
    pinv = _PseudoInverse(problem, spec.cg_tol, spec.cg_iters)
    amp = np.sqrt(problem.y)
    report = RunReport(solver="fienup", parameters={**spec.to_dict(), "iters": iters}, seed=spec.seed)
    start = time.perf_counter()
    for _ in range(iters):
        z = problem.apply(x)
        mag = np.abs(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mag > 0, amp / mag, 1.0)
        x_new = problem.project(pinv(ratio * z, x))
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-300)
        x = x_new
        res = intensity_residual(problem, x)
        report.record(res.value, float(np.linalg.norm(res.amplitude)), change)
        if change < spec.tol:
            report.converged = True
            break
    return _finish(report, x, start)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt


def _explicit_jacobian(problem: PhaseProblem, z):
    # rows 2 Re(conj(z_i) B_i) in the real parametrization (x.real, x.imag) for complex signals
    B = problem._dense
    J = 2.0 * (z.real[:, None] * B.real + z.imag[:, None] * B.imag)
    if problem.is_real:
        return J
    return np.hstack([J, 2.0 * (z.imag[:, None] * B.real - z.real[:, None] * B.imag)])


def _normal_equations(problem: PhaseProblem, x, residuals, dense: bool):
    """Gauss-Newton system at ``x``: ``(v -> J^T J v, -J^T F, G)``.

    ``G`` is the explicit Gram matrix ``J^T J`` (in the real parametrization
    for complex signals) when ``dense`` is set and ``B`` is materialized,
    otherwise None and both products are matrix-free.
    """
    z = problem.apply(x)
    if dense and problem._dense is not None:
        J = _explicit_jacobian(problem, z)
        G = J.T @ J
        rhs = -(J.T @ residuals)
        if problem.is_real:
            return (lambda v: G @ v), rhs, G
        n = problem.n

        def normal(v):
            w = G @ np.concatenate([v.real, v.imag])
            return w[:n] + 1j * w[n:]

        return normal, rhs[:n] + 1j * rhs[n:], G

    def normal(v):
        Jv = 2.0 * np.real(np.conj(z) * problem.apply(v))
        return 2.0 * problem.project(problem.adjoint(z * Jv))

    return normal, -2.0 * problem.project(problem.adjoint(z * residuals)), None


def _damped_step(problem: PhaseProblem, system, alpha: float, spec: FlowSpec):
    # returns (step, ok); Cholesky on the explicit Gram matrix, else CG
    gn, rhs, G = system
    if G is None:
        step, _, ok = real_cg(lambda v: gn(v) + alpha * v, rhs, tol=spec.cg_tol, max_iters=spec.cg_iters)
        return step, ok
    b = rhs if problem.is_real else np.concatenate([rhs.real, rhs.imag])
    try:
        factor = cho_factor(G + alpha * np.eye(G.shape[0]), check_finite=False)
    except LinAlgError:
        return None, False
    d = cho_solve(factor, b, check_finite=False)
    if not np.all(np.isfinite(d)):
        return None, False
    return (d if problem.is_real else d[: problem.n] + 1j * d[problem.n:]), True


def levenberg_marquardt(problem: PhaseProblem, x0=None, spec: FlowSpec | None = None):
    """Damped Gauss-Newton on ``L(x) = ||y - |Bx|^2||^2``.

    Each step minimizes ``||F + J d||^2 + alpha ||d||^2`` (``F = |Bx|^2 - y``)
    through the damped normal equations: conjugate gradients matrix-free, or
    a Cholesky solve of the explicit Gram matrix for small dense problems
    (``spec.lm_solver``). An accepted step
    (``L`` decreases) multiplies ``alpha`` by ``lm_decay``; a rejected one by
    ``lm_inflate``. ``alpha_0 = 10 L(x0) / ||x0||^2`` unless given. After
    ``lm_max_rejections`` consecutive rejections the run stops with a
    diagnostic message.
    """
    spec = spec or FlowSpec()
    x = _start(problem, x0, spec)
    res = intensity_residual(problem, x)
    value = res.value
    nx = float(np.vdot(x, x).real)
    alpha = spec.lm_alpha0 if spec.lm_alpha0 is not None else 10.0 * value / max(nx, 1e-300)
    alpha = max(alpha, 1e-300)
    report = RunReport(solver="levenberg_marquardt", parameters=spec.to_dict(), seed=spec.seed)
    start = time.perf_counter()
    rejections = 0
    system = None
    dense = spec.lm_solver == "direct" or (spec.lm_solver == "auto" and problem.n <= PINV_LIMIT)
    floor = 1e-30 * max(float(problem.y @ problem.y), 1e-300)
    for _ in range(spec.max_iters):
        if value <= floor:
            report.converged = True
            break
        if system is None:
            system = _normal_equations(problem, x, res.residuals, dense)
        step, ok = _damped_step(problem, system, alpha, spec)
        trial = x + step if ok else x
        trial_res = intensity_residual(problem, trial) if ok else res
        if ok and trial_res.value < value:
            change = np.linalg.norm(step) / max(np.linalg.norm(trial), 1e-300)
            x, res, value = trial, trial_res, trial_res.value
            alpha *= spec.lm_decay
            rejections = 0
            system = None
            report.record(value, float(np.linalg.norm(res.amplitude)), change)
            if change < spec.tol:
                report.converged = True
                break
        else:
            alpha *= spec.lm_inflate
            rejections += 1
            if rejections >= spec.lm_max_rejections:
                report.message = f"stopped after {rejections} consecutive rejected steps"
                report.flags.append("rejections")
                break
    report.extras["alpha_final"] = alpha
    return _finish(report, x, start)


# ---------------------------------------------------------------------------
# gradient flows


def curvature_estimate(problem: PhaseProblem, x, iters: int = 50) -> float:
    """Largest eigenvalue of the Gauss-Newton Hessian ``2 J^T J`` of ``L`` at ``x``."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(problem.n)
    if not problem.is_real:
        v = v + 1j * rng.standard_normal(problem.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = 2.0 * jacobian_adjoint(problem, x, jacobian_apply(problem, x, v))
        lam_new = np.linalg.norm(w)
        if lam_new == 0:
            return 0.0
        v = w / lam_new
        if abs(lam_new - lam) <= 1e-6 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(lam)


def _tv_prox(problem: PhaseProblem, x, weight: float, iters: int):
    shape = problem.shape
    if problem.is_real:
        return tv_denoise(x.reshape(shape), weight, max_iters=iters).ravel()
    mag = tv_denoise(np.abs(x).reshape(shape), weight, lower=0.0, max_iters=iters).ravel()
    return mag * np.exp(1j * np.angle(x))


def _flow(problem: PhaseProblem, x0, spec: FlowSpec, kind: str, reg_lambda: float):
    x = _start(problem, x0, spec)
    m = problem.m
    norm0 = float(np.vdot(x, x).real)
    if norm0 == 0:
        raise InvalidArgumentError("x0 must be non-zero")
    report = RunReport(solver=kind if reg_lambda == 0 else f"{kind}+tv", parameters=spec.to_dict(), seed=spec.seed)
    start = time.perf_counter()
    if kind == "wirtinger":
        mu_max = spec.mu_max
        if mu_max is None:
            # largest stable real-gradient step is about 1 / curvature; express it as mu
            mu_max = 4.0 * m * norm0 / max(curvature_estimate(problem, x), 1e-300)
        report.parameters["mu_max_used"] = mu_max
        scale = 1.0 / (2.0 * m * norm0)
    else:
        mu_taf = spec.taf_mu / problem.lambda_max
        report.parameters["mu_used"] = mu_taf
    empty = 0
    z = problem.apply(x)
    initial = intensity_residual(problem, x, z).value
    for k in range(1, spec.max_iters + 1):
        if kind == "wirtinger":
            mu_k = mu_schedule(k, mu_max, spec.k0)
            x_new = x - mu_k * scale * wirtinger_gradient(problem, x, z)
            reg_weight = reg_lambda * mu_k
        else:
            step, keep = taf_update(problem, x, mu_taf, spec.gamma, z)
            x_new = x + step
            reg_weight = reg_lambda * mu_taf
            n_keep = int(keep.sum())
            report.extras.setdefault("active_counts", []).append(n_keep)
            empty = empty + 1 if n_keep == 0 else 0
        if reg_weight > 0:
            x_new = _tv_prox(problem, x_new, reg_weight, spec.reg_inner_iters)
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-300)
        x = x_new
        z = problem.apply(x)
        res = intensity_residual(problem, x, z)
        if not np.isfinite(res.value):
            report.message = f"non-finite objective at iteration {k}"
            raise DivergenceError(report.message, iterate=x, report=report)
        report.record(res.value, float(np.linalg.norm(res.amplitude)), change)
        if kind == "taf" and empty >= 5:
            report.message = "truncation set empty for 5 consecutive iterations"
            report.flags.append("empty_index_set")
            break
        # an empty index set gives a zero step, which is a stall rather than convergence
        if change < spec.tol and empty == 0:
            report.converged = True
            break
    report.extras["initial_objective"] = initial
    return _finish(report, x, start)


def wirtinger_flow(problem: PhaseProblem, x0=None, spec: FlowSpec | None = None):
    """Gradient descent ``x - mu_k / (2 m ||x0||^2) grad L`` with ``mu_k = mu_max (1 - e^{-k/k0})``.

    ``grad L`` is the Wirtinger gradient. ``L`` need not decrease monotonically;
    the report holds its trace.
    """
    return _flow(problem, x0, spec or FlowSpec(), "wirtinger", 0.0)


def truncated_amplitude_flow(problem: PhaseProblem, x0=None, spec: FlowSpec | None = None):
    """Amplitude flow restricted to rows with ``sqrt(y_i)/|B_i x| <= 1 + gamma``.

    The step is ``taf_mu / lambda_max(B^H B)``; the size of each index set is
    logged in ``report.extras["active_counts"]``.
    """
    spec = spec or FlowSpec(init="orthogonality")
    return _flow(problem, x0, spec, "taf", 0.0)


def regularized_flow(problem: PhaseProblem, base: str = "wirtinger", x0=None, spec: FlowSpec | None = None,
                     reg_lambda: float | None = None):
    """Forward flow step followed by a TV proximal step.

    The backward weight is ``reg_lambda * mu_{k+1}`` with ``mu`` the step of the
    base flow as it appears in its update. This is forward-backward splitting
    for ``L(x) / (4 m ||x0||^2) + reg_lambda * TV(x)`` (Wirtinger flow) and for
    ``1/2 sum (|B_i x| - sqrt(y_i))^2 + reg_lambda * TV(x)`` (amplitude flow).
    Complex signals are regularized through their magnitude with the phase
    kept. ``reg_lambda = 0`` reproduces the base flow.
    """
    spec = spec or FlowSpec()
    lam = spec.reg_lambda if reg_lambda is None else reg_lambda
    if lam < 0:
        raise InvalidArgumentError("reg_lambda must be non-negative")
    if base in ("wirtinger", "wf"):
        return _flow(problem, x0, spec, "wirtinger", lam)
    if base == "taf":
        return _flow(problem, x0, spec, "taf", lam)
    raise InvalidArgumentError(f"unknown base flow {base!r}")


SOLVERS = {
    "fienup": lambda problem, x0, spec: fienup_gs(problem, x0, spec=spec),
    "lm": levenberg_marquardt,
    "wirtinger": wirtinger_flow,
    "taf": truncated_amplitude_flow,
}


def solve(problem: PhaseProblem, solver: str, x0=None, spec: FlowSpec | None = None):
    """Dispatch by name: ``fienup``, ``lm``, ``wirtinger``, ``taf``; TV variants via ``spec.reg``."""
    spec = spec or FlowSpec()
    if spec.reg == "tv" and solver in ("wirtinger", "taf"):
        return regularized_flow(problem, solver, x0, spec)
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise InvalidArgumentError(f"unknown phase solver {solver!r}; expected one of {sorted(SOLVERS)}") from None
    return fn(problem, x0, spec)

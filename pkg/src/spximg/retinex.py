"""Beam self-calibration in the log domain.

An illuminated scene factors as ``p = l * t`` with a smooth beam ``l`` and a
target ``t`` in ``[0, 1]``. With ``s = log p``, ``l = log(beam)`` and
``r = log t`` the split is additive, ``s = l + r``, with ``r <= 0`` and
``l >= s``.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter
from scipy.sparse.linalg import LinearOperator, cg

from .errors import ConvergenceError, DivergenceError, InvalidArgumentError
from .grids import ImageGrid
from .report import RunReport
from .variational.linops import LinearMap, div2d, grad2d, laplacian_eigenvalues, power_norm
from .variational.pdhg import SolverSpec
from .variational.solvers import _as_map, solve_nnls, solve_penalized, tv_denoise, tv_value

EPS_REL = 1e-6
# parameter grid of the calibration heat maps
SWEEP_ALPHAS = tuple(10.0 ** k for k in range(-3, 4))
SWEEP_BETAS = tuple(10.0 ** (k / 2.0) for k in range(0, 7))


def _as_2d(a):
    if isinstance(a, ImageGrid):
        return a.as_array().astype(float)
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise InvalidArgumentError("expected a 2D raster")
    return a


def _lap(u):
    # grad^T grad with Neumann boundary
    return -div2d(grad2d(u))


def _sq_grad(u) -> float:
    return float(np.sum(grad2d(u) ** 2))


def smooth_solve(b, weight: float):
    """Solve ``(I + weight * grad^T grad) x = b`` exactly in the DCT-II basis."""
    b = np.asarray(b, dtype=float)
    if weight == 0:
        return b.copy()
    eig = laplacian_eigenvalues(*b.shape)
    return idctn(dctn(b, type=2, norm="ortho") / (1.0 + weight * eig), type=2, norm="ortho")


@dataclass
class LogScene:
    """Log-domain decomposition ``s = l + r`` with the flooring level ``eps``."""

    s: np.ndarray
    l: np.ndarray
    r: np.ndarray
    eps: float = 0.0
    floored: int = 0

    @classmethod
    def from_image(cls, p, eps: float | None = None) -> "LogScene":
        """Take logs of ``p`` after flooring at ``eps`` (default ``1e-6 * max(p)``)."""
        p = _as_2d(p)
        peak = float(p.max())
        if not peak > 0:
            raise InvalidArgumentError("image has no positive value to take logs of")
        eps = EPS_REL * peak if eps is None else eps
        floored = int(np.count_nonzero(p < eps))
        s = np.log(np.maximum(p, eps))
        return cls(s=s, l=s.copy(), r=np.zeros_like(s), eps=eps, floored=floored)

    def beam(self) -> np.ndarray:
        return np.exp(self.l)

    def target(self) -> np.ndarray:
        return np.exp(self.r)

    def image(self) -> np.ndarray:
        return np.exp(self.l + self.r)

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.r <= tol))


@dataclass(frozen=True)
class CalibrationSpec:
    """Weights and iteration counts for the calibration schemes.

    ``alpha``/``beta`` weight the Retinex models. ``tau``, ``lambda_r`` and
    ``lambda_l`` drive the joint forward-backward scheme; its data term (and
    that of the alternating scheme) is balanced by :func:`balance_data`, so
    the weights do not depend on the number of measurements. ``tau=None``
    picks ``1 / max(exp(s0))^2``.
    """

    alpha: float = 10.0
    beta: float = 100.0
    tau: float | None = None
    lambda_r: float = 1e-3
    lambda_l: float = 1.0
    outer_iters: int = 200
    model: str = "ng_wang"
    isotropic: bool = False
    retinex_every: int = 1
    recon: SolverSpec = field(default_factory=lambda: SolverSpec(kind="tv", lam=1e-3, nonneg=True, max_iters=3000))
    inner_iters: int = 300
    tol: float = 1e-6
    init_sigma: float | None = None
    eps_rel: float = EPS_REL

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_r"):
            if getattr(self, name) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.lambda_l < 0:
            raise InvalidArgumentError("lambda_l must be non-negative")
        if self.tau is not None and self.tau <= 0:
            raise InvalidArgumentError("tau must be positive")
        if self.model not in ("kimmel", "ng_wang"):
            raise InvalidArgumentError(f"unknown retinex model {self.model!r}")
        if self.outer_iters < 1 or self.retinex_every < 1:
            raise InvalidArgumentError("iteration counts must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recon"] = self.recon.to_dict()
        return d


# ---------------------------------------------------------------------------
# Retinex models on a known image


def kimmel_objective(l, s, alpha, beta) -> float:
    d = l - s
    return 0.5 * float(np.sum(d * d)) + 0.5 * alpha * _sq_grad(d) + 0.5 * beta * _sq_grad(l)


def ng_wang_objective(l, r, s, alpha, beta, isotropic: bool = False) -> float:
    d = l - s + r
    return 0.5 * float(np.sum(d * d)) + alpha * tv_value(r, isotropic) + 0.5 * beta * _sq_grad(l)


def nonneg_quadratic(weight: float, c, u0=None, max_iters: int = 20000, tol: float = 1e-9, report=None):
    """Minimize ``1/2 u^T Q u + c^T u`` over ``u >= 0`` with ``Q = I + weight * grad^T grad``.

    Monotone FISTA with gradient restarts; stops when the complementarity
    residual ``max|min(u, Q u + c)|`` drops below ``tol``. Returns
    ``(u, kkt_residual)``.
    """
    c = np.asarray(c, dtype=float)
    lip = 1.0 + 8.0 * weight

    def q(u):
        return u + weight * _lap(u)

    def obj(u):
        return 0.5 * float(np.sum(u * q(u))) + float(np.sum(c * u))

    x = np.zeros_like(c) if u0 is None else np.maximum(np.asarray(u0, dtype=float), 0.0)
    fx = obj(x)
    y, t = x.copy(), 1.0
    kkt = np.inf
    for k in range(max_iters):
        z = np.maximum(y - (q(y) + c) / lip, 0.0)
        fz = obj(z)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if fz <= fx:
            x_prev, x, fx = x, z, fz
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
            t = t_next
        else:
            # rejected candidate: restart momentum from the best point
            y, t = x.copy(), 1.0
        if report is not None:
            report.record(fx, np.nan, np.nan)
        if k % 10 == 9:
            kkt = float(np.abs(np.minimum(x, q(x) + c)).max())
            if kkt <= tol:
                break
            if kkt <= 1e3 * tol:
                polished = _polish(q, c, x)
                p_kkt = float(np.abs(np.minimum(polished, q(polished) + c)).max())
                if p_kkt <= tol:
                    x, kkt = polished, p_kkt
                    if report is not None:
                        report.record(min(obj(x), fx), np.nan, np.nan)
                    break
    else:
        kkt = float(np.abs(np.minimum(x, q(x) + c)).max())
    return x, kkt


def _polish(q, c, x):
    """Exact solve on the current free set (``x > 0``), clipped at zero."""
    free = x > 0
    if not free.any():
        return x
    idx = np.flatnonzero(free)

    def restricted(v):
        full = np.zeros(x.size)
        full[idx] = v
        return q(full.reshape(x.shape)).ravel()[idx]

    op = LinearOperator((idx.size, idx.size), matvec=restricted, dtype=float)
    sol, _ = cg(op, -c.ravel()[idx], x0=x.ravel()[idx], rtol=1e-13, atol=0.0, maxiter=10 * idx.size)
    out = np.zeros(x.size)
    out[idx] = np.maximum(sol, 0.0)
    return out.reshape(x.shape)


def retinex_kimmel(s, alpha: float, beta: float, *, max_iters: int = 20000, tol: float = 1e-6,
                   l0=None, return_report: bool = False):
    """Smooth illumination above the log-image.

    Solves ``min_{l >= s} 1/2||l - s||^2 + alpha/2 ||grad(l - s)||^2 + beta/2 ||grad l||^2``
    with projected accelerated gradient on ``u = l - s``. Raises
    :class:`ConvergenceError` if the KKT residual stays above ``tol``
    (relative to ``max(1, max|s|, beta max|grad^T grad s|)``) after ``max_iters``.
    """
    s = _as_2d(s)
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError("log-image must be finite")
    if alpha < 0 or beta < 0:
        raise InvalidArgumentError("alpha and beta must be non-negative")
    report = RunReport(solver="kimmel", parameters={"alpha": alpha, "beta": beta, "tol": tol})
    start = time.perf_counter()
    c = beta * _lap(s)
    scale = max(1.0, float(np.abs(s).max()), float(np.abs(c).max()))
    u0 = None if l0 is None else _as_2d(l0) - s
    u, kkt = nonneg_quadratic(alpha + beta, c, u0, max_iters=max_iters, tol=tol * scale, report=report)
    l = s + u
    report.wall_time = time.perf_counter() - start
    report.extras["kkt_residual"] = kkt
    # history holds the QP objective; shift to the model's value
    offset = 0.5 * beta * _sq_grad(s)
    report.objective = [v + offset for v in report.objective]
    report.converged = kkt <= tol * scale
    report.message = "converged" if report.converged else "max_iters reached"
    report.image = l
    if not report.converged:
        raise ConvergenceError(f"Kimmel solver stopped with KKT residual {kkt:.3g}", iterate=l, report=report)
    return (l, report) if return_report else l


def retinex_ng_wang(s, alpha: float, beta: float, *, outer_iters: int = 100, inner_iters: int = 300,
                    tol: float = 1e-7, isotropic: bool = False, return_report: bool = False):
    """Illumination/reflectance split with a TV prior on the reflectance.

    Solves ``min_{l >= s, r <= 0} 1/2||l - s + r||^2 + alpha TV(r) + beta/2 ||grad l||^2``
    by alternating exact minimization in ``l`` (constrained quadratic) and
    ``r`` (bounded TV denoising). The alternation starts at ``r = 0``; a
    step that would raise the objective is discarded, so the recorded
    objective never increases. Returns ``(l, r)`` (plus the report).
    """
    s = _as_2d(s)
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError("log-image must be finite")
    report = RunReport(solver="ng_wang", parameters={"alpha": alpha, "beta": beta, "outer_iters": outer_iters,
                                                    "isotropic": isotropic})
    start = time.perf_counter()
    scale = max(1.0, float(np.abs(s).max()))
    r = np.zeros_like(s)
    u = None
    lap_s = beta * _lap(s)
    l = s.copy()
    current = np.inf
    for k in range(outer_iters):
        # l-step: u = l - s >= 0 minimizes 1/2||u + r||^2 + beta/2||grad(u + s)||^2
        u, _ = nonneg_quadratic(beta, r + lap_s, u, tol=1e-9 * scale)
        l_new = s + u
        obj_l = ng_wang_objective(l_new, r, s, alpha, beta, isotropic)
        if obj_l <= current:
            l = l_new
            current = obj_l
        # r-step: bounded ROF denoising of s - l
        r_new = tv_denoise(s - l, alpha, isotropic=isotropic, upper=0.0, max_iters=inner_iters, tol=1e-8, x0=r)
        r_new = np.minimum(r_new, 0.0)
        obj_r = ng_wang_objective(l, r_new, s, alpha, beta, isotropic)
        previous = current
        change = np.linalg.norm(r_new - r) / max(np.linalg.norm(r_new), 1e-12)
        if obj_r <= current:
            r = r_new
            current = obj_r
        report.record(current, np.nan, change)
        if k > 0 and previous - current <= tol * max(abs(current), 1e-12):
            report.converged = True
            break
    report.wall_time = time.perf_counter() - start
    report.message = "converged" if report.converged else "outer_iters reached"
    report.image = r
    report.state["l"] = l
    return (l, r, report) if return_report else (l, r)


def decompose(s, alpha: float, beta: float, model: str = "ng_wang", **kwargs) -> LogScene:
    """Run one Retinex model and return the split as a :class:`LogScene`."""
    s = _as_2d(s)
    if model == "kimmel":
        l = retinex_kimmel(s, alpha, beta, **kwargs)
        r = np.minimum(s - l, 0.0)
    elif model == "ng_wang":
        l, r = retinex_ng_wang(s, alpha, beta, **kwargs)
    else:
        raise InvalidArgumentError(f"unknown retinex model {model!r}")
    return LogScene(s=s, l=l, r=r)


# ---------------------------------------------------------------------------
# calibration from single-pixel data


def balance_data(A, y):
    """Reweight the data term so the mean-row direction does not dominate.

    Binary masks put one singular value of ``A`` (along the all-ones
    measurement vector ``u``) far above the rest, which stalls any gradient
    step on the log variables. The residual is therefore weighted with
    ``W = I - (1 - w) u u^T``, ``w = ||(I - u u^T) A|| / ||A||``, and the
    pair ``(W A, W y)`` is scaled to unit operator norm. ``W`` is invertible,
    so exact data are still fitted exactly.
    """
    A = _as_map(A)
    y = np.asarray(y, dtype=float)
    m = A.out_size
    u = np.full(m, 1.0 / math.sqrt(m))

    def weighting(w):
        return lambda v: v - (1.0 - w) * u * (u @ v)

    centred = weighting(0.0)
    bulk = power_norm(LinearMap(lambda x: centred(A.apply(x)), lambda v: A.adjoint(centred(v)), A.in_size, m))
    w = min(1.0, bulk / A.norm()) if bulk > 0 else 1.0
    W = weighting(w)
    B = LinearMap(lambda x: W(A.apply(x)), lambda v: A.adjoint(W(v)), A.in_size, m, name="WA")
    c = 1.0 / B.norm()
    return B.scaled(c), c * W(y)


def initial_log_beam(A: LinearMap, y, shape, sigma: float | None = None, floor_rel: float = EPS_REL):
    """Heavily smoothed back-projection ``A^T y``, rescaled to fit ``y`` and logged."""
    d1, d2 = shape
    sigma = max(d1, d2) / 4.0 if sigma is None else sigma
    back = gaussian_filter(np.asarray(A.adjoint(y), dtype=float).reshape(d1, d2), sigma, mode="nearest")
    back = np.maximum(back, 0.0)
    if not back.max() > 0:
        raise InvalidArgumentError("back-projection has no positive value")
    Ab = A.apply(back.ravel())
    scale = float(np.dot(Ab, y) / max(np.dot(Ab, Ab), 1e-300))
    if scale <= 0:
        scale = 1.0
    est = scale * back
    return np.log(np.maximum(est, floor_rel * est.max()))


def two_step_calibrate(y, A, spec: CalibrationSpec, shape, model: str | None = None):
    """Reconstruct ``p``, then split ``log p`` with a Retinex model.

    Returns ``(beam, target, image, report)``; pixels floored before the log
    are counted in ``report.flags``/``report.extras``.
    """
    model = model or spec.model
    start = time.perf_counter()
    x, rec = solve_penalized(A, y, spec.recon, shape) if spec.recon.kind != "nnls" else \
        (solve_nnls(A, y, spec.recon), None)
    p = np.maximum(np.asarray(x).reshape(shape), 0.0)
    scene = LogScene.from_image(p, eps=spec.eps_rel * max(float(p.max()), 1e-300))
    split = decompose(scene.s, spec.alpha, spec.beta, model, isotropic=spec.isotropic) if model == "ng_wang" else \
        decompose(scene.s, spec.alpha, spec.beta, model)
    report = RunReport(solver=f"two_step-{model}", parameters=spec.to_dict())
    if rec is not None:
        report.objective = list(rec.objective)
        report.residual = list(rec.residual)
        report.change = list(rec.change)
    report.extras["floored_pixels"] = scene.floored
    if scene.floored:
        report.flags.append("floored")
    report.wall_time = time.perf_counter() - start
    report.converged = True
    report.image = np.exp(split.r)
    return np.exp(split.l), np.exp(split.r), p, report


def _forward_increment(A, y, s, tau):
    p = np.exp(s).ravel()
    res = y - A.apply(p)
    return tau * (p * A.adjoint(res)).reshape(s.shape), 0.5 * float(res @ res)


def alternating_recon_retinex(y, A, spec: CalibrationSpec, shape, s0=None):
    """Gradient step on ``s = log p`` followed by a Retinex split, repeated.

    ``s^{k+1/2} = s^k + tau e^{s^k} A^T(y - A e^{s^k})``; every
    ``spec.retinex_every`` iterations the split ``(l, r)`` of ``s^{k+1/2}``
    is computed and ``s^{k+1} = l + r``. Returns ``(beam, target, report)``.
    """
    A, y = balance_data(A, y)
    d1, d2 = shape
    s = initial_log_beam(A, y, shape, spec.init_sigma) if s0 is None else _as_2d(s0).copy()
    tau = spec.tau if spec.tau is not None else 1.0 / float(np.exp(s).max()) ** 2
    report = RunReport(solver=f"alternating-{spec.model}", parameters=spec.to_dict())
    start = time.perf_counter()
    l, r = s.copy(), np.zeros_like(s)
    initial = None
    for k in range(spec.outer_iters):
        step, data = _forward_increment(A, y, s, tau)
        if initial is None:
            initial = data
        if not np.isfinite(data) or data > 1e3 * max(initial, 1e-300):
            report.message = f"data residual grew to {data:.4g}"
            raise DivergenceError(report.message, iterate=s, report=report)
        s_half = s + step
        if (k + 1) % spec.retinex_every == 0 or k == spec.outer_iters - 1:
            split = decompose(s_half, spec.alpha, spec.beta, spec.model, **(
                {"isotropic": spec.isotropic, "outer_iters": 20} if spec.model == "ng_wang" else {}))
            l, r = split.l, split.r
            s_new = l + r
        else:
            s_new = s_half
        report.record(data, math.sqrt(2.0 * data), np.linalg.norm(s_new - s) / max(np.linalg.norm(s_new), 1e-12))
        s = s_new
    report.wall_time = time.perf_counter() - start
    report.converged = True
    report.image = np.exp(r)
    report.state["l"] = l
    return np.exp(l), np.exp(r), report


def _fbs_objective(A, y, r, l, lambda_r, lambda_l, isotropic):
    res = y - A.apply(np.exp(r + l).ravel())
    return 0.5 * float(res @ res) + lambda_r * tv_value(r, isotropic) + lambda_l * _sq_grad(l)


def joint_fbs_calibrate(y, A, spec: CalibrationSpec, shape, l0=None, r0=None):
    """Joint forward-backward splitting in the log variables ``(r, l)``.

    Forward: both variables move by ``tau e^{r+l} A^T(y - A e^{r+l})``.
    Backward: ``r`` by bounded TV denoising (weight ``tau lambda_r``, then
    ``r <= 0``); ``l`` by the exact solve of
    ``(I + 2 tau lambda_l grad^T grad) l = l^{k+1/2}``. When the composite
    objective increases the step is retried with ``tau / 2`` (at most 10
    times per iteration). Returns ``(beam, target, report)``.
    """
    if np.any(np.asarray(y) < 0):
        raise InvalidArgumentError("measurements must be non-negative")
    A, y = balance_data(A, y)
    l = initial_log_beam(A, y, shape, spec.init_sigma) if l0 is None else _as_2d(l0).copy()
    r = np.zeros(shape) if r0 is None else np.minimum(_as_2d(r0), 0.0)
    tau = spec.tau if spec.tau is not None else 1.0 / float(np.exp(l + r).max()) ** 2
    report = RunReport(solver="joint_fbs", parameters={**spec.to_dict(), "tau0": tau})
    start = time.perf_counter()
    current = _fbs_objective(A, y, r, l, spec.lambda_r, spec.lambda_l, spec.isotropic)
    initial = current
    halvings = 0
    for k in range(spec.outer_iters):
        for attempt in range(11):
            step, _ = _forward_increment(A, y, l + r, tau)
            r_new = tv_denoise(r + step, tau * spec.lambda_r, isotropic=spec.isotropic, upper=0.0,
                               max_iters=spec.inner_iters, tol=1e-6, x0=r)
            r_new = np.minimum(r_new, 0.0)
            l_new = smooth_solve(l + step, 2.0 * tau * spec.lambda_l)
            trial = _fbs_objective(A, y, r_new, l_new, spec.lambda_r, spec.lambda_l, spec.isotropic)
            if np.isfinite(trial) and trial <= current:
                break
            if attempt == 10:
                break
            tau *= 0.5
            halvings += 1
        if not np.isfinite(trial) or trial > 10.0 * initial:
            report.message = f"objective grew from {initial:.4g} to {trial:.4g}"
            raise DivergenceError(report.message, iterate=(l, r), report=report)
        change = (np.linalg.norm(r_new - r) + np.linalg.norm(l_new - l)) / max(
            np.linalg.norm(r_new) + np.linalg.norm(l_new), 1e-12)
        if trial > current:
            # no decrease even at the smallest step: stop at the current point
            report.flags.append("stalled")
            break
        r, l, current = r_new, l_new, trial
        res = y - A.apply(np.exp(r + l).ravel())
        report.record(current, float(np.linalg.norm(res)), change)
        if change < spec.tol:
            report.converged = True
            break
    report.extras["tau_final"] = tau
    report.extras["tau_halvings"] = halvings
    report.wall_time = time.perf_counter() - start
    report.message = report.message or ("converged" if report.converged else "outer_iters reached")
    report.image = np.exp(r)
    report.state["l"] = l
    report.state["r"] = r
    return np.exp(l), np.exp(r), report

import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spximg.errors import DimensionMismatchError, InvalidArgumentError
from spximg.phase import (
    BENCHMARK_COLUMNS,
    FlowSpec,
    InitWarning,
    PhaseGeometry,
    PhaseProblem,
    fienup_gs,
    intensity_gradient,
    intensity_residual,
    jacobian_adjoint,
    jacobian_apply,
    levenberg_marquardt,
    make_phase_problem,
    mu_schedule,
    orthogonality_init,
    power_method,
    regularized_flow,
    run_benchmark,
    solve,
    spectral_init,
    taf_update,
    truncated_amplitude_flow,
    wirtinger_flow,
    wirtinger_gradient,
    write_benchmark_csv,
)
from spximg.scene import make_phantom


def complex_gaussian(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def instance(rng, m=18, n=6, model="complex"):
    B = complex_gaussian(rng, m, n)
    x = complex_gaussian(rng, n) if model == "complex" else rng.standard_normal(n)
    return PhaseProblem(B, np.abs(B @ x) ** 2, model=model), B, x


def loss(B, y, x):
    return float(np.sum((y - np.abs(B @ x) ** 2) ** 2))


def unitary(rng, n):
    q, r = np.linalg.qr(complex_gaussian(rng, n, n))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def orthogonal(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q


# ---------------------------------------------------------------------------
# problem and residuals


def test_problem_validation():
    B = np.eye(3)
    with pytest.raises(InvalidArgumentError):
        PhaseProblem(B, [1.0, -1.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        PhaseProblem(B, [1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        PhaseProblem(B, [1.0, 1.0, 1.0], model="quaternion")
    p = PhaseProblem(B, [1.0, 1.0, 1.0])
    with pytest.raises(DimensionMismatchError):
        intensity_residual(p, np.ones(4))


def test_residual_zero_at_truth(rng):
    p, _, x = instance(rng)
    assert intensity_residual(p, x).value <= 1e-20 * float(p.y @ p.y)


def test_residual_at_zero_is_data_energy(rng):
    p, _, _ = instance(rng)
    assert intensity_residual(p, np.zeros(p.n, complex)).value == pytest.approx(float(p.y @ p.y), rel=1e-15)


def test_residual_matches_loop(rng):
    p, B, _ = instance(rng)
    p = p.with_data(p.y * rng.uniform(0.5, 1.5, p.m))
    x = complex_gaussian(rng, p.n)
    value, res, amp = intensity_residual(p, x)
    loop_value, loop_res, loop_amp = 0.0, [], []
    for i in range(p.m):
        mag2 = abs(sum(B[i, j] * x[j] for j in range(p.n))) ** 2
        loop_res.append(mag2 - p.y[i])
        loop_amp.append(math.sqrt(p.y[i]) - math.sqrt(mag2))
        loop_value += (mag2 - p.y[i]) ** 2
    assert abs(value - loop_value) <= 1e-12 * loop_value
    np.testing.assert_allclose(res, loop_res, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(amp, loop_amp, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# derivative oracles


def _fd(f, x, e, h):
    return (f(x + h * e) - f(x - h * e)) / (2 * h)


@pytest.mark.parametrize("model", ["real", "complex"])
def test_gradient_matches_finite_differences(rng, model):
    p, B, _ = instance(rng, model=model)
    x = complex_gaussian(rng, p.n) if model == "complex" else rng.standard_normal(p.n)
    g = intensity_gradient(p, x)
    f = lambda u: loss(B, p.y, u)
    fd = np.array([_fd(f, x, e, 1e-6) for e in np.eye(p.n)])
    assert np.linalg.norm(g.real - fd) <= 1e-5 * np.linalg.norm(fd)
    if model == "complex":
        fd_im = np.array([_fd(f, x, 1j * e, 1e-6) for e in np.eye(p.n)])
        assert np.linalg.norm(g.imag - fd_im) <= 1e-5 * np.linalg.norm(fd_im)


def test_wirtinger_gradient_is_half_and_matches_sum(rng):
    p, B, _ = instance(rng)
    x = complex_gaussian(rng, p.n)
    w = wirtinger_gradient(p, x)
    loop = sum(2 * (abs(B[i] @ x) ** 2 - p.y[i]) * B[i].conj() * (B[i] @ x) for i in range(p.m))
    np.testing.assert_allclose(w, loop, rtol=1e-12, atol=1e-12 * np.abs(loop).max())
    np.testing.assert_allclose(2 * w, intensity_gradient(p, x), rtol=1e-15)


@pytest.mark.parametrize("model", ["real", "complex"])
def test_gradient_vanishes_at_truth(rng, model):
    p, _, x = instance(rng, model=model)
    g = intensity_gradient(p, x)
    scale = np.linalg.norm(intensity_gradient(p, 2 * x))
    assert np.linalg.norm(g) <= 1e-12 * scale


@pytest.mark.parametrize("model", ["real", "complex"])
def test_jacobian_matches_finite_differences(rng, model):
    p, B, _ = instance(rng, model=model)
    x = complex_gaussian(rng, p.n) if model == "complex" else rng.standard_normal(p.n)
    F = lambda u: np.abs(B @ u) ** 2
    directions = list(np.eye(p.n)) + ([1j * e for e in np.eye(p.n)] if model == "complex" else [])
    for e in directions:
        fd = _fd(F, x, e, 1e-6)
        assert np.linalg.norm(jacobian_apply(p, x, e) - fd) <= 1e-5 * np.linalg.norm(fd)


@given(seed=st.integers(0, 2**32 - 1))
def test_jacobian_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    p, _, _ = instance(rng)
    x, v = complex_gaussian(rng, p.n), complex_gaussian(rng, p.n)
    u = rng.standard_normal(p.m)
    lhs = float(jacobian_apply(p, x, v) @ u)
    rhs = float(np.vdot(v, jacobian_adjoint(p, x, u)).real)
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + abs(rhs) + 1)


def _taf_loop(B, y, x, mu, gamma):
    out = np.zeros(B.shape[1], complex)
    keep = []
    for i in range(B.shape[0]):
        zi = B[i] @ x
        ratio = math.sqrt(y[i]) / abs(zi) if abs(zi) > 0 else math.inf
        keep.append(ratio <= 1 + gamma)
        if keep[-1]:
            out += mu * (ratio - 1) * B[i].conj() * zi
    return out, np.array(keep)


def test_taf_update_matches_loop(rng):
    p, B, _ = instance(rng)
    x = complex_gaussian(rng, p.n)
    step, keep = taf_update(p, x, 0.3, 0.7)
    loop, loop_keep = _taf_loop(B, p.y, x, 0.3, 0.7)
    assert 0 < keep.sum() < p.m
    np.testing.assert_array_equal(keep, loop_keep)
    assert np.abs(step - loop).max() <= 1e-12 * max(np.abs(loop).max(), 1)


def test_taf_large_gamma_is_untruncated(rng):
    p, B, _ = instance(rng)
    x = complex_gaussian(rng, p.n)
    step, keep = taf_update(p, x, 1.0, 1e300)
    assert keep.all()
    z = B @ x
    full = B.conj().T @ ((np.sqrt(p.y) / np.abs(z) - 1) * z)
    np.testing.assert_allclose(step, full, rtol=1e-12, atol=1e-12)


def test_taf_fixed_point_and_zero_rows(rng):
    p, _, x = instance(rng)
    step, keep = taf_update(p, x, 1.0, 0.7)
    assert keep.all()
    assert np.linalg.norm(step) <= 1e-12 * np.linalg.norm(x)
    # a row orthogonal to x has an infinite ratio and is never selected
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    q = PhaseProblem(B, [1.0, 1.0])
    _, keep = taf_update(q, np.array([1.0, 0.0]), 1.0, 1e6)
    np.testing.assert_array_equal(keep, [True, False])


def test_mu_schedule():
    assert mu_schedule(1, 2.0, 330.0) == pytest.approx(2.0 * (1 - math.exp(-1 / 330)))
    assert mu_schedule(0, 2.0, 330.0) == 0.0
    assert mu_schedule(100_000, 2.0, 330.0) == pytest.approx(2.0)
    values = [mu_schedule(k, 1.0, 5.0) for k in range(1, 50)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_flowspec_validation():
    for bad in (dict(gamma=0), dict(max_iters=0), dict(k0=-1), dict(lm_alpha0=0), dict(lm_decay=1.0),
                dict(lm_inflate=1.0), dict(init="magic"), dict(orth_fraction=1.0), dict(reg="l2"),
                dict(reg_lambda=-1), dict(lm_solver="qr")):
        with pytest.raises(InvalidArgumentError):
            FlowSpec(**bad)


# ---------------------------------------------------------------------------
# initializations


def test_power_method_diagonal():
    D = np.diag([1.0, 5.0, 2.0])
    v, lam, ok = power_method(lambda u: D @ u, np.ones(3), iters=500, tol=1e-12)
    assert ok
    assert lam == pytest.approx(5.0)
    assert abs(v[1]) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("model", ["real", "complex"])
def test_spectral_init_planted_direction(rng, model):
    n = 8
    Q = orthogonal(rng, n) if model == "real" else unitary(rng, n)
    k = 3
    x_true = Q[k].conj()
    y = np.abs(Q @ x_true) ** 2
    assert np.count_nonzero(y > 1e-20) == 1
    p = PhaseProblem(Q, y, model="complex")
    x0 = spectral_init(p, seed=4)
    cos = abs(np.vdot(x0, x_true)) / (np.linalg.norm(x0) * np.linalg.norm(x_true))
    assert cos >= 1 - 1e-6
    assert np.mean(np.abs(Q @ x0) ** 2) == pytest.approx(y.mean(), rel=1e-10)


def test_spectral_init_deterministic_and_seeded(rng):
    p, _, _ = instance(rng, m=40, n=6)
    a, b = spectral_init(p, seed=7), spectral_init(p, seed=7)
    np.testing.assert_array_equal(a, b)
    x0, info = spectral_init(p, seed=7, return_info=True)
    assert info["converged"]


def test_spectral_init_rejects_zero_data():
    with pytest.raises(InvalidArgumentError):
        spectral_init(PhaseProblem(np.eye(3), np.zeros(3)))


def test_spectral_init_warns_without_convergence(rng):
    p, _, _ = instance(rng, m=40, n=6)
    with pytest.warns(InitWarning):
        spectral_init(p, iters=1, tol=1e-15)


def test_orthogonality_init_huge_entry():
    rng = np.random.default_rng(3)
    Q = orthogonal(rng, 6)
    y = np.ones(6)
    y[2] = 1e6
    x0, info = orthogonality_init(PhaseProblem(Q, y), fraction=5 / 6, return_info=True)
    assert info["selected"] == 1
    cos = abs(x0 @ Q[2]) / np.linalg.norm(x0)
    assert cos >= 0.99


def test_orthogonality_init_boundaries(rng):
    p, _, _ = instance(rng, m=6, n=3)
    for fraction in (0.99, 1.0, 0.0):
        with pytest.raises(InvalidArgumentError):
            orthogonality_init(p, fraction=fraction)


def test_orthogonality_init_equal_ratios_falls_back():
    with pytest.warns(InitWarning):
        x0 = orthogonality_init(PhaseProblem(np.eye(6), np.ones(6)), seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        np.testing.assert_array_equal(x0, spectral_init(PhaseProblem(np.eye(6), np.ones(6)), seed=1))


def test_orthogonality_init_deterministic(rng):
    p, _, _ = instance(rng, m=36, n=6)
    np.testing.assert_array_equal(orthogonality_init(p, seed=2), orthogonality_init(p, seed=2))


# ---------------------------------------------------------------------------
# solvers


def test_fienup_fixed_point(rng):
    p, _, x = instance(rng, m=24, n=6, model="real")
    x1, _ = fienup_gs(p, x, iters=1)
    assert np.linalg.norm(x1 - x) <= 1e-10 * np.linalg.norm(x)


def test_fienup_unitary_one_step_is_magnitude_substitution(rng):
    n = 6
    U = unitary(rng, n)
    y = np.abs(U @ complex_gaussian(rng, n)) ** 2
    p = PhaseProblem(U, y, model="complex")
    x0 = complex_gaussian(rng, n)
    z = U @ x0
    expected = U.conj().T @ (np.sqrt(y) * z / np.abs(z))
    x1, _ = fienup_gs(p, x0, iters=1)
    np.testing.assert_allclose(x1, expected, rtol=1e-12, atol=1e-12)


def test_fienup_zero_magnitude_rows_keep_ratio_one():
    B = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    p = PhaseProblem(B, [4.0, 1.0, 9.0])
    x1, _ = fienup_gs(p, np.array([1.0, 0.0]), iters=1)
    assert np.all(np.isfinite(x1))


def test_lm_fixed_point(rng):
    p, _, x = instance(rng, model="real")
    x1, report = levenberg_marquardt(p, x, FlowSpec(max_iters=5))
    np.testing.assert_array_equal(x1, x)
    assert report.converged


def test_lm_large_damping_stays_put(rng):
    p, _, _ = instance(rng, model="complex")
    x0 = complex_gaussian(rng, p.n)
    x1, _ = levenberg_marquardt(p, x0, FlowSpec(max_iters=1, lm_alpha0=1e12))
    assert np.linalg.norm(x1 - x0) <= 1e-6 * np.linalg.norm(x0)


@pytest.mark.parametrize("lm_solver", ["cg", "direct"])
def test_lm_monotone_and_recovers(rng, lm_solver):
    p, _, x = instance(rng, m=48, n=6, model="real")
    x0 = x + 0.1 * rng.standard_normal(p.n)
    x1, report = levenberg_marquardt(p, x0, FlowSpec(max_iters=200, lm_solver=lm_solver))
    obj = report.objective
    assert all(b < a for a, b in zip(obj, obj[1:]))
    assert min(np.linalg.norm(x1 - x), np.linalg.norm(x1 + x)) <= 1e-6 * np.linalg.norm(x)


def test_lm_rejections_terminate():
    # at x = 0 the Jacobian vanishes, so no step can reduce L
    p = PhaseProblem(np.eye(3), np.ones(3))
    _, report = levenberg_marquardt(p, np.zeros(3), FlowSpec(lm_alpha0=1.0))
    assert "rejections" in report.flags
    assert report.iterations == 0


def test_wirtinger_flow_recovers_real_signal(rng):
    p, _, x = instance(rng, m=60, n=6, model="real")
    x1, report = wirtinger_flow(p, spectral_init(p), FlowSpec(max_iters=3000, k0=10))
    assert min(np.linalg.norm(x1 - x), np.linalg.norm(x1 + x)) <= 1e-6 * np.linalg.norm(x)
    assert report.objective[-1] < report.objective[0]


def test_wirtinger_flow_rejects_zero_start(rng):
    p, _, _ = instance(rng)
    with pytest.raises(InvalidArgumentError):
        wirtinger_flow(p, np.zeros(p.n, complex))


def test_taf_recovers_real_signal(rng):
    p, _, x = instance(rng, m=60, n=6, model="real")
    x1, report = truncated_amplitude_flow(p, orthogonality_init(p), FlowSpec(max_iters=3000))
    assert min(np.linalg.norm(x1 - x), np.linalg.norm(x1 + x)) <= 1e-6 * np.linalg.norm(x)
    assert len(report.extras["active_counts"]) == report.iterations


def test_taf_empty_index_set_terminates(rng):
    p, _, x = instance(rng, model="real")
    _, report = truncated_amplitude_flow(p, 1e-6 * x, FlowSpec(max_iters=100, gamma=0.7))
    assert "empty_index_set" in report.flags
    assert report.iterations == 5


@pytest.mark.parametrize("solver", ["wirtinger", "taf", "lm"])
def test_flows_stationary_at_truth(rng, solver):
    p, _, x = instance(rng, model="complex")
    x1, _ = solve(p, solver, x, FlowSpec(max_iters=3, mu_max=0.5))
    assert np.linalg.norm(x1 - x) <= 1e-10 * np.linalg.norm(x)


@pytest.mark.parametrize("base", ["wirtinger", "taf"])
def test_regularized_flow_zero_lambda_is_base(base):
    x_true = make_phantom("pi_glyph", 8, 8).values
    p, _ = make_phase_problem(x_true, 2.0, 5, PhaseGeometry(d1=8, d2=8, diffraction=False))
    spec = FlowSpec(max_iters=40)
    x0 = spectral_init(p)
    a, ra = regularized_flow(p, base, x0, spec, 0.0)
    b, rb = solve(p, base, x0, spec)
    np.testing.assert_array_equal(a, b)
    assert ra.objective == rb.objective


def test_regularized_flow_smooths():
    x_true = make_phantom("pi_glyph", 8, 8).values
    p, _ = make_phase_problem(x_true, 2.0, 5, PhaseGeometry(d1=8, d2=8, diffraction=False))
    spec = FlowSpec(max_iters=40)
    x0 = spectral_init(p)
    a, _ = regularized_flow(p, "wirtinger", x0, spec, 0.0)
    b, _ = regularized_flow(p, "wirtinger", x0, spec, 1.0)
    tv = lambda v: np.abs(np.diff(v.reshape(8, 8), axis=0)).sum() + np.abs(np.diff(v.reshape(8, 8), axis=1)).sum()
    assert tv(b) < tv(a)
    with pytest.raises(InvalidArgumentError):
        regularized_flow(p, "fienup", x0, spec, 1.0)


THETA = math.pi / 3


@pytest.mark.parametrize("solver,reg", [("wirtinger", "none"), ("taf", "none"), ("lm", "none"),
                                        ("fienup", "none"), ("wirtinger", "tv"), ("taf", "tv")])
def test_global_phase_equivariance(solver, reg):
    rng = np.random.default_rng(11)
    n = 16
    B = complex_gaussian(rng, 64, n)
    x_true = complex_gaussian(rng, n)
    p = PhaseProblem(B, np.abs(B @ x_true) ** 2, model="complex", shape=(4, 4))
    x0 = complex_gaussian(rng, n)
    spec = FlowSpec(max_iters=30, mu_max=0.2, reg=reg, reg_lambda=0.05 if reg == "tv" else 0.0, tol=0.0)
    a, ra = solve(p, solver, x0, spec)
    b, rb = solve(p, solver, np.exp(1j * THETA) * x0, spec)
    assert np.linalg.norm(b - np.exp(1j * THETA) * a) <= 1e-9 * np.linalg.norm(a)
    np.testing.assert_allclose(ra.objective, rb.objective, rtol=1e-9, atol=1e-12 * ra.objective[0])


@pytest.mark.parametrize("solver", ["wirtinger", "taf", "lm", "fienup"])
def test_solvers_deterministic(solver):
    x_true = make_phantom("pi_glyph", 8, 8).values
    p, _ = make_phase_problem(x_true, 2.0, 1, PhaseGeometry(d1=8, d2=8, diffraction=False))
    spec = FlowSpec(max_iters=30, seed=3)
    a, _ = solve(p, solver, None, spec)
    b, _ = solve(p, solver, None, spec)
    np.testing.assert_array_equal(a, b)


def test_solve_unknown_name(rng):
    p, _, _ = instance(rng)
    with pytest.raises(InvalidArgumentError):
        solve(p, "newton", np.ones(p.n, complex))


# ---------------------------------------------------------------------------
# benchmark


def test_make_phase_problem_noise_and_validation():
    x = make_phantom("pi_glyph", 30, 30).values
    geom = PhaseGeometry()
    p, x_true = make_phase_problem(x, 0.2, 0, geom)
    assert p.m == 180
    assert intensity_residual(p, x_true).value <= 1e-20 * float(p.y @ p.y)
    q, _ = make_phase_problem(x, 0.2, 0, geom, snr_db=20.0)
    assert np.all(q.y >= 0) and not np.array_equal(p.y, q.y)
    with pytest.raises(InvalidArgumentError):
        make_phase_problem(x, 0.0, 0, geom)
    with pytest.raises(InvalidArgumentError):
        make_phase_problem(np.ones(10), 1.0, 0, geom)


def test_benchmark_csv(tmp_path):
    x = make_phantom("pi_glyph", 8, 8).values
    geom = PhaseGeometry(d1=8, d2=8, diffraction=False)
    spec = FlowSpec(max_iters=20)
    rows = run_benchmark(x, ["fienup", "wirtinger"], ["random", "spectral"], [1.0, 2.0], [0, 1], geom, spec=spec)
    assert len(rows) == 2 * 2 * 2 * 2
    assert [(r["sampling_rate"], r["seed"]) for r in rows[::4]] == [(1.0, 0), (1.0, 1), (2.0, 0), (2.0, 1)]
    path = tmp_path / "bench.csv"
    write_benchmark_csv(rows, path, include_timing=False)
    with open(path, newline="") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == BENCHMARK_COLUMNS
    assert len(table) == len(rows) + 1
    assert all(r[-1] == "" for r in table[1:])
    assert all(float(r[5]) >= 0 for r in table[1:])
    again = run_benchmark(x, ["fienup", "wirtinger"], ["random", "spectral"], [1.0, 2.0], [0, 1], geom, spec=spec,
                          jobs=2)
    assert [r["rel_mse"] for r in again] == [r["rel_mse"] for r in rows]

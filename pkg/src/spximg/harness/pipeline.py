"""Seeded end-to-end pipelines and deterministic artifact trees."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, SolverError
from ..grids import ImageGrid
from ..imageio import write_masks, write_pgm, write_raster
from ..masks import apply_modulation_depth, generate_random_masks, random_circulant_masks
from ..metrics import evaluate, optimal_phase, phase_invariant_rel_mse, psnr, ssim
from ..phase import FlowSpec, PhaseGeometry, initialize, make_phase_problem, run_cells, solve
from ..retinex import (
    CalibrationSpec,
    LogScene,
    alternating_recon_retinex,
    decompose,
    joint_fbs_calibrate,
    two_step_calibrate,
)
from ..scene import compose_scene, make_complex_test_image, make_gaussian_beam, make_phantom
from ..sensing import FresnelPropagator, Measurements, SensingOperator, add_noise
from ..variational import SolverSpec, bregman_iterate, solve_nnls, solve_penalized
from .config import ExperimentConfig

MANIFEST = "manifest.sha256"
TIMING = "timing.json"
NOISE_SEED_OFFSET = 1


# ---------------------------------------------------------------------------
# artifact tree


class ArtifactWriter:
    """Writes files under ``root`` and lists them, with SHA-256 hashes, in a manifest.

    Timing information goes to :data:`TIMING`, which is not manifested.
    """

    def __init__(self, root):
        self.root = os.fspath(root)
        os.makedirs(self.root, exist_ok=True)
        self.paths = set()
        self.timing = {}

    def path(self, rel: str) -> str:
        full = os.path.join(self.root, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.paths.add(rel)
        return full

    def text(self, rel: str, content: str):
        with open(self.path(rel), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)

    def json(self, rel: str, obj):
        self.text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def image(self, stem: str, values, shape):
        grid = ImageGrid(shape[0], shape[1], np.asarray(values, dtype=float).ravel())
        write_raster(self.path(f"{stem}.txt"), grid)
        write_pgm(self.path(f"{stem}.pgm"), grid)

    def report(self, rel: str, report, metrics=None):
        if metrics is not None:
            report.metrics = metrics
        self.timing[rel] = report.wall_time
        self.text(rel, report.to_json(include_timing=False) + "\n")

    def csv(self, rel: str, header, rows):
        with open(self.path(rel), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def finish(self) -> str:
        lines = []
        for rel in sorted(self.paths):
            with open(os.path.join(self.root, rel), "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
            lines.append(f"{digest}  {rel}")
        manifest = os.path.join(self.root, MANIFEST)
        with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(os.path.join(self.root, TIMING), "w", encoding="utf-8") as fh:
            json.dump(self.timing, fh, indent=2, sort_keys=True)
        return manifest


def config_text(cfg: ExperimentConfig) -> str:
    """Canonical config without the output location, so the tree does not depend on where it is written."""
    return "".join(line for line in cfg.to_ini().splitlines(keepends=True) if not line.startswith("output ="))


# ---------------------------------------------------------------------------
# simulation


@dataclass
class Simulation:
    """Scene components, the sensing operator and its real measurement matrix ``A``.

    With diffraction the complex map ``B`` enters as ``A = [Re B; Im B]``.
    """

    image: ImageGrid
    target: ImageGrid
    beam: ImageGrid | None
    operator: SensingOperator
    A: np.ndarray
    y: np.ndarray


def build_scene(cfg: ExperimentConfig):
    """Returns ``(image, target, beam)``; ``beam`` is None without illumination."""
    sc = cfg.scene
    target = make_phantom(sc.kind, sc.d1, sc.d2, background=sc.background)
    if not sc.beam:
        return target, target, None
    beam = make_gaussian_beam(sc.d1, sc.d2, sigma=sc.beam_sigma, peak=sc.beam_peak)
    return compose_scene(beam, target), target, beam


def build_masks(cfg: ExperimentConfig, rate: float | None = None, seed: int | None = None):
    sc, mk = cfg.scene, cfg.masks
    n = sc.d1 * sc.d2
    rate = mk.rate if rate is None else rate
    seed = cfg.mask_seed if seed is None else seed
    m = max(1, int(round(rate * n)))
    if mk.kind == "circulant":
        masks = random_circulant_masks(min(m, n), sc.d1, sc.d2, mk.open_probability, seed)
    else:
        masks = generate_random_masks(m, sc.d1, sc.d2, mk.open_probability, seed)
    if mk.depth < 1 or mk.offset > 0:
        masks = apply_modulation_depth(masks, mk.depth, mk.offset)
    return masks


def simulate(cfg: ExperimentConfig, rate: float | None = None, seed: int | None = None) -> Simulation:
    """Scene, masks and (optionally noisy) linear measurements."""
    image, target, beam = build_scene(cfg)
    seed = cfg.mask_seed if seed is None else seed
    masks = build_masks(cfg, rate, seed)
    ph = cfg.physics
    if ph.diffraction:
        sc = cfg.scene
        pair = tuple(FresnelPropagator(sc.d1, sc.d2, ph.wavelength, dist, ph.pitch)
                     for dist in (ph.distance_object_mask, ph.distance_mask_detector))
        op = SensingOperator(masks, pair)
        B = op.matrix()
        A = np.vstack([B.real, B.imag])
    else:
        op = SensingOperator(masks)
        A = masks.matrix.astype(float)
    meas = add_noise(Measurements(A @ image.values), cfg.snr_db, seed + NOISE_SEED_OFFSET)
    return Simulation(image, target, beam, op, A, np.asarray(meas.y, dtype=float))


def solver_spec(cfg: ExperimentConfig, kind: str | None = None, lam: float | None = None) -> SolverSpec:
    sv = cfg.solver
    return SolverSpec(kind=kind or sv.kind, lam=sv.lam if lam is None else lam, beta=sv.beta,
                      isotropic=sv.isotropic, nonneg=sv.nonneg, max_iters=sv.max_iters, tol=sv.tol)


def reconstruct(sim: Simulation, spec: SolverSpec, bregman: int = 0):
    """Returns ``(x, report)`` for one linear reconstruction."""
    A = sim.A
    shape = sim.image.shape
    if spec.kind == "nnls":
        return solve_nnls(A, sim.y, spec, return_report=True)
    if bregman > 0:
        iterates, report = bregman_iterate(A, sim.y, spec, bregman, shape)
        return iterates[-1], report
    return solve_penalized(A, sim.y, spec, shape)


def calibration_spec(cfg: ExperimentConfig) -> CalibrationSpec:
    ca = cfg.calibrate
    recon = SolverSpec(kind="tv", lam=ca.recon_lam, nonneg=True, max_iters=cfg.solver.max_iters)
    return CalibrationSpec(alpha=ca.alpha, beta=ca.beta, lambda_r=ca.lambda_r, lambda_l=ca.lambda_l,
                           outer_iters=ca.outer_iters, model=ca.model, inner_iters=ca.inner_iters, recon=recon)


def calibrate(cfg: ExperimentConfig, sim: Simulation):
    """Returns ``(beam, target, report)`` for the configured method."""
    A = sim.A
    shape = sim.image.shape
    spec = calibration_spec(cfg)
    method = cfg.calibrate.method
    if method == "two_step":
        beam, target, _, report = two_step_calibrate(sim.y, A, spec, shape)
        return beam, target, report
    if method == "alternating":
        return alternating_recon_retinex(sim.y, A, spec, shape)
    return joint_fbs_calibrate(sim.y, A, spec, shape)


def phase_geometry(cfg: ExperimentConfig) -> PhaseGeometry:
    ph = cfg.physics
    return PhaseGeometry(cfg.scene.d1, cfg.scene.d2, ph.wavelength, ph.pitch, ph.distance_object_mask,
                         ph.distance_mask_detector, ph.diffraction, cfg.masks.open_probability)


def phase_signal(cfg: ExperimentConfig):
    sc = cfg.scene
    if sc.complex:
        return make_complex_test_image(sc.d1, sc.d2)
    return make_phantom(sc.kind, sc.d1, sc.d2, background=sc.background)


def flow_spec(cfg: ExperimentConfig) -> FlowSpec:
    pz = cfg.phase
    return FlowSpec(max_iters=pz.max_iters, init=pz.init, reg=pz.reg, reg_lambda=pz.reg_lambda,
                    taf_mu=pz.taf_mu, gamma=pz.gamma, k0=pz.k0, seed=cfg.seed)


# ---------------------------------------------------------------------------
# single runs


def _metrics(reference, candidate, shape) -> dict:
    return evaluate(reference, candidate, shape).to_dict()


def run_reconstruct(cfg: ExperimentConfig, out: ArtifactWriter):
    sim = simulate(cfg)
    x, report = reconstruct(sim, solver_spec(cfg), cfg.solver.bregman)
    shape = sim.image.shape
    metrics = _metrics(sim.image, x, shape)
    out.image("reconstruction", x, shape)
    out.image("ground_truth", sim.image.values, shape)
    out.report("report.json", report, metrics)
    report.write_history_csv(out.path("history.csv"))
    return metrics


def run_calibrate(cfg: ExperimentConfig, out: ArtifactWriter):
    sim = simulate(cfg)
    beam, target, report = calibrate(cfg, sim)
    shape = sim.image.shape
    metrics = {"target": _metrics(sim.target, target, shape)}
    if sim.beam is not None:
        metrics["beam"] = _metrics(sim.beam, beam, shape)
    out.image("beam", beam, shape)
    out.image("target", target, shape)
    out.report("report.json", report, metrics)
    report.write_history_csv(out.path("history.csv"))
    return metrics


def run_phase(cfg: ExperimentConfig, out: ArtifactWriter):
    signal = phase_signal(cfg)
    problem, x_true = make_phase_problem(signal, cfg.masks.rate, cfg.mask_seed, phase_geometry(cfg),
                                         cfg.phase.model, cfg.snr_db)
    spec = flow_spec(cfg)
    x0 = initialize(problem, spec.init, cfg.seed, spec.orth_fraction, spec.power_iters)
    x, report = solve(problem, cfg.phase.solver, x0, spec)
    shape = (cfg.scene.d1, cfg.scene.d2)
    # the data fix x only up to a global phase (a sign in the real model)
    aligned = x * np.exp(-1j * optimal_phase(x_true, x))
    if not np.iscomplexobj(x):
        aligned = aligned.real
    metrics = _metrics(x_true, aligned, shape)
    metrics["phase_invariant_rel_mse"] = phase_invariant_rel_mse(x_true, x)
    if np.iscomplexobj(aligned):
        out.image("amplitude", np.abs(aligned), shape)
        out.image("phase", np.angle(aligned), shape)
    else:
        out.image("reconstruction", aligned, shape)
    out.report("report.json", report, metrics)
    report.write_history_csv(out.path("history.csv"))
    return metrics


def run_simulate(cfg: ExperimentConfig, out: ArtifactWriter):
    if cfg.task == "phase":
        signal = phase_signal(cfg)
        problem, x_true = make_phase_problem(signal, cfg.masks.rate, cfg.mask_seed, phase_geometry(cfg),
                                             cfg.phase.model, cfg.snr_db)
        shape = (cfg.scene.d1, cfg.scene.d2)
        out.image("ground_truth_amplitude", np.abs(x_true), shape)
        out.csv("measurements.csv", ["index", "y"], enumerate(problem.y.tolist()))
        return {"m": problem.m, "n": problem.n}
    sim = simulate(cfg)
    shape = sim.image.shape
    out.image("scene", sim.image.values, shape)
    out.image("target", sim.target.values, shape)
    if sim.beam is not None:
        out.image("beam", sim.beam.values, shape)
    write_masks(out.path("masks.txt"), sim.operator.masks)
    out.csv("measurements.csv", ["index", "y"], enumerate(sim.y.tolist()))
    return {"m": int(sim.y.size), "n": sim.image.n}


TASK_RUNNERS = {"reconstruct": run_reconstruct, "calibrate": run_calibrate, "phase": run_phase}


def run(cfg: ExperimentConfig, out_dir, task: str | None = None) -> dict:
    """Run the configured task and write its artifact tree; returns the metrics."""
    out = ArtifactWriter(out_dir)
    out.text("config.ini", config_text(cfg))
    runner = run_simulate if task == "simulate" else TASK_RUNNERS[task or cfg.task]
    metrics = runner(cfg, out)
    out.json("metrics.json", metrics)
    out.finish()
    return metrics


# ---------------------------------------------------------------------------
# sweeps


def _retinex_cell(args):
    s, target, model, alpha, beta = args
    try:
        split = decompose(s, alpha, beta, model)
        est = np.exp(split.r)
        return {"psnr": psnr(target, est), "ssim": ssim(target, est), "status": "ok"}
    except SolverError as exc:
        return {"psnr": math.nan, "ssim": math.nan, "status": f"failed: {exc}"}


def _lambda_cell(args):
    cfg, rate, seed, lam = args
    sim = simulate(cfg, rate, seed)
    try:
        x, report = reconstruct(sim, solver_spec(cfg, lam=lam), cfg.solver.bregman)
        m = evaluate(sim.image, x, sim.image.shape)
        return {"psnr": m.psnr_db, "ssim": m.ssim, "rel_mse": m.rel_mse, "iterations": report.iterations,
                "status": "ok"}
    except SolverError as exc:
        return {"psnr": math.nan, "ssim": math.nan, "rel_mse": math.nan, "iterations": 0, "status": f"failed: {exc}"}


def _phase_cell(args):
    cfg, rate, seed, snr = args
    return run_cells(phase_signal(cfg).values, cfg.sweep.solvers, cfg.sweep.inits, rate, seed,
                     phase_geometry(cfg), cfg.phase.model, flow_spec(cfg), snr)


def _map(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _matrix_rows(alphas, betas, values):
    return [[a, *values[i]] for i, a in enumerate(alphas)]


def run_sweep(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> dict:
    """Parameter sweep; cells run in a worker pool, outputs are assembled in a fixed order."""
    out = ArtifactWriter(out_dir)
    out.text("config.ini", config_text(cfg))
    sw = cfg.sweep
    start = time.perf_counter()
    summary = {}
    if sw.kind == "retinex":
        image, target, _ = build_scene(cfg)
        s = LogScene.from_image(image.as_array()).s
        tgt = target.as_array()
        for model in sw.models:
            tasks = [(s, tgt, model, a, b) for a in sw.alphas for b in sw.betas]
            cells = _map(_retinex_cell, tasks, jobs)
            shape = (len(sw.alphas), len(sw.betas))
            header = ["alpha\\beta", *sw.betas]
            for metric in ("psnr", "ssim"):
                grid = np.array([c[metric] for c in cells]).reshape(shape)
                out.csv(f"retinex_{model}_{metric}.csv", header, _matrix_rows(sw.alphas, sw.betas, grid.tolist()))
            failed = [t[3:] for t, c in zip(tasks, cells) if c["status"] != "ok"]
            summary[model] = {"cells": len(cells), "failed": len(failed)}
    elif sw.kind == "lambda":
        tasks = [(cfg, r, seed, lam) for r in sw.rates for seed in sw.seeds for lam in sw.lams]
        cells = _map(_lambda_cell, tasks, jobs)
        rows = [[t[1], t[2], t[3], c["psnr"], c["ssim"], c["rel_mse"], c["iterations"], c["status"]]
                for t, c in zip(tasks, cells)]
        out.csv("lambda_sweep.csv", ["sampling_rate", "seed", "lam", "psnr_db", "ssim", "rel_mse", "iterations",
                                     "status"], rows)
        summary["cells"] = len(rows)
    else:
        tasks = [(cfg, r, seed, snr) for snr in sw.snrs for r in sw.rates for seed in sw.seeds]
        rows = [row for chunk in _map(_phase_cell, tasks, jobs) for row in chunk]
        cols = ["solver", "init", "sampling_rate", "seed", "snr_db", "rel_mse", "iterations"]
        out.csv("phase_benchmark.csv", [*cols, "seconds"], [[row[c] for c in cols] + [""] for row in rows])
        out.timing["phase_benchmark_seconds"] = [row["seconds"] for row in rows]
        summary["cells"] = len(rows)
    out.timing["sweep"] = time.perf_counter() - start
    out.json("summary.json", summary)
    out.finish()
    return summary


# ---------------------------------------------------------------------------
# comparison table


def run_compare(cfg: ExperimentConfig, out_dir) -> list[dict]:
    """One row per (rate, solver) with PSNR/SSIM/rel-MSE; the best SSIM per rate is flagged."""
    solvers = cfg.compare.solvers or [cfg.solver.kind]
    rates = cfg.compare.rates or [cfg.masks.rate]
    if not solvers:
        raise InvalidArgumentError("compare needs at least one solver")
    out = ArtifactWriter(out_dir)
    out.text("config.ini", config_text(cfg))
    rows = []
    for rate in rates:
        sim = simulate(cfg, rate)
        group = []
        for kind in solvers:
            lam = cfg.compare.lams.get(kind, cfg.solver.lam)
            x, report = reconstruct(sim, solver_spec(cfg, kind=kind, lam=lam))
            m = evaluate(sim.image, x, sim.image.shape)
            group.append({"sampling_rate": rate, "solver": kind, "lam": lam, "psnr_db": m.psnr_db, "ssim": m.ssim,
                          "rel_mse": m.rel_mse, "best": False})
            out.report(f"reports/rate{rate!r}_{kind}.json", report, m.to_dict())
        best = max(range(len(group)), key=lambda i: group[i]["ssim"])
        group[best]["best"] = True
        rows.extend(group)
    cols = ["sampling_rate", "solver", "lam", "psnr_db", "ssim", "rel_mse", "best"]
    out.csv("comparison.csv", cols, [[r[c] for c in cols] for r in rows])
    out.finish()
    return rows

"""Paired phase-retrieval benchmarks over sampling rates, initializations and seeds."""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidArgumentError, SolverError
from ..grids import values_of
from ..masks import generate_random_masks
from ..metrics import phase_invariant_rel_mse
from ..sensing import FresnelPropagator, Measurements, SensingOperator, add_noise
from .init import initialize
from .problem import FlowSpec, PhaseProblem
from .solvers import solve

BENCHMARK_COLUMNS = ("solver", "init", "sampling_rate", "seed", "snr_db", "rel_mse", "iterations", "seconds")


@dataclass(frozen=True)
class PhaseGeometry:
    """Grid, masks and free-space propagation for phase experiments (lengths in mm)."""

    d1: int = 30
    d2: int = 30
    wavelength: float = 0.857
    pitch: float = 1.0
    distance_object_mask: float = 10.0
    distance_mask_detector: float = 10.0
    diffraction: bool = True
    open_probability: float = 0.5

    def operator(self, m: int, seed: int) -> SensingOperator:
        masks = generate_random_masks(m, self.d1, self.d2, self.open_probability, seed)
        if not self.diffraction:
            return SensingOperator(masks, mode="intensity")
        d_om = FresnelPropagator(self.d1, self.d2, self.wavelength, self.distance_object_mask, self.pitch)
        d_md = FresnelPropagator(self.d1, self.d2, self.wavelength, self.distance_mask_detector, self.pitch)
        return SensingOperator(masks, (d_om, d_md), mode="intensity")


def make_phase_problem(signal, rate: float, seed: int, geometry: PhaseGeometry | None = None, model: str = "real",
                       snr_db: float = math.inf):
    """Simulate ``y = |B x|^2`` (plus optional noise) with ``m = round(rate * n)`` random masks.

    Noisy intensities are clipped at zero. Returns ``(problem, x_true)``.
    """
    geometry = geometry or PhaseGeometry()
    x = values_of(signal)
    n = geometry.d1 * geometry.d2
    if x.size != n:
        raise InvalidArgumentError(f"signal has {x.size} entries, geometry has {n}")
    if rate <= 0:
        raise InvalidArgumentError("sampling rate must be positive")
    m = max(1, int(round(rate * n)))
    op = geometry.operator(m, seed)
    y = op.apply(x)
    if not math.isinf(snr_db):
        y = np.maximum(add_noise(Measurements(y, mode="intensity"), snr_db, seed + 1_000_003).y, 0.0)
    return PhaseProblem(op, y, model=model), x


def _spec_for(spec, solver: str) -> FlowSpec:
    if isinstance(spec, dict):
        spec = spec.get(solver)
    return spec or FlowSpec()


def run_cells(signal, solvers, inits, rate: float, seed: int, geometry: PhaseGeometry | None = None,
              model: str = "real", spec=None, snr_db: float = math.inf) -> list[dict]:
    """Benchmark rows for one ``(rate, seed)`` problem, every solver from every start.

    ``spec`` is a :class:`FlowSpec` or a mapping from solver name to one.
    Solver failures give ``rel_mse = nan`` instead of raising.
    """
    problem, x_true = make_phase_problem(signal, rate, seed, geometry, model, snr_db)
    starts = {}
    rows = []
    for init in inits:
        for solver in solvers:
            cell_spec = replace(_spec_for(spec, solver), init=init, seed=seed)
            start = time.perf_counter()
            iterations = 0
            try:
                if init not in starts:
                    starts[init] = initialize(problem, init, seed, cell_spec.orth_fraction, cell_spec.power_iters)
                x, report = solve(problem, solver, starts[init], cell_spec)
                err = phase_invariant_rel_mse(x_true, x)
                iterations = report.iterations
            except SolverError as exc:
                err = math.nan
                iterations = exc.report.iterations if exc.report is not None else 0
            label = solver if cell_spec.reg == "none" else f"{solver}+{cell_spec.reg}"
            rows.append({"solver": label, "init": init, "sampling_rate": rate, "seed": seed, "snr_db": snr_db,
                         "rel_mse": err, "iterations": iterations, "seconds": time.perf_counter() - start})
    return rows


def _cells(args):
    return run_cells(*args)


def run_benchmark(signal, solvers, inits, rates, seeds, geometry: PhaseGeometry | None = None, model: str = "real",
                  spec=None, snr_db: float = math.inf, jobs: int = 1) -> list[dict]:
    """All (rate, seed) problems in a fixed order, optionally in worker processes."""
    signal = values_of(signal)
    tasks = [(signal, list(solvers), list(inits), r, seed, geometry, model, spec, snr_db)
             for r in rates for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_cells, tasks))
    else:
        chunks = [_cells(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def write_benchmark_csv(rows, path, include_timing: bool = True):
    """Write rows with the benchmark columns; ``seconds`` is blank when timing is excluded."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for row in rows:
            out = []
            for col in BENCHMARK_COLUMNS:
                v = row[col]
                if col == "seconds" and not include_timing:
                    v = ""
                elif isinstance(v, float):
                    v = repr(v)
                out.append(v)
            writer.writerow(out)

"""Solver telemetry shared by every iterative method."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


@dataclass
class RunReport:
    """Per-iteration history plus the final state of one solver run."""

    solver: str = ""
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    change: list = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    seed: int | None = None
    wall_time: float = 0.0
    converged: bool = False
    message: str = ""
    flags: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    image: np.ndarray | None = field(default=None, repr=False)
    # solver internals for warm starts; never serialized
    state: dict = field(default_factory=dict, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def record(self, objective: float, residual: float, change: float):
        self.objective.append(float(objective))
        self.residual.append(float(residual))
        self.change.append(float(change))

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "flags": list(self.flags),
            "parameters": self.parameters,
            "seed": self.seed,
            "metrics": self.metrics,
            "extras": self.extras,
            "history": {"objective": self.objective, "residual": self.residual, "change": self.change},
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return _jsonable(out)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def write_history_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "residual", "change"])
            for k, row in enumerate(zip(self.objective, self.residual, self.change), start=1):
                writer.writerow([k, *(repr(v) for v in row)])

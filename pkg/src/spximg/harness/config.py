"""Experiment configuration: INI text with one section per concern."""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field

from ..errors import ConfigurationError
from ..phase.problem import INIT_KINDS, MODELS
from ..scene import PHANTOM_KINDS
from ..variational.pdhg import SOLVER_KINDS

TASKS = ("reconstruct", "calibrate", "phase")
CALIBRATION_METHODS = ("fbs", "two_step", "alternating")
RETINEX_MODELS = ("kimmel", "ng_wang")
PHASE_SOLVERS = ("fienup", "lm", "wirtinger", "taf")
SWEEP_KINDS = ("retinex", "lambda", "phase")
MASK_KINDS = ("random", "circulant")


@dataclass
class SceneConfig:
    kind: str = "x_cross"
    d1: int = 32
    d2: int = 32
    background: float = 0.0
    beam: bool = False
    beam_sigma: float = 8.0
    beam_peak: float = 1.0
    complex: bool = False


@dataclass
class MaskConfig:
    kind: str = "random"
    rate: float = 1.0
    open_probability: float = 0.5
    depth: float = 1.0
    offset: float = 0.0
    seed: int | None = None


@dataclass
class PhysicsConfig:
    diffraction: bool = False
    wavelength: float = 0.857
    pitch: float = 1.0
    distance_object_mask: float = 10.0
    distance_mask_detector: float = 10.0


@dataclass
class SolverConfig:
    kind: str = "tv"
    lam: float = 0.01
    beta: float = 2.0
    isotropic: bool = True
    nonneg: bool = True
    max_iters: int = 2000
    tol: float = 1e-6
    bregman: int = 0


@dataclass
class CalibrationConfig:
    method: str = "fbs"
    alpha: float = 10.0
    beta: float = 100.0
    lambda_r: float = 1e-3
    lambda_l: float = 1.0
    outer_iters: int = 200
    model: str = "ng_wang"
    inner_iters: int = 300
    recon_lam: float = 1e-3


@dataclass
class PhaseConfig:
    solver: str = "lm"
    init: str = "spectral"
    model: str = "real"
    max_iters: int = 200
    reg: str = "none"
    reg_lambda: float = 0.0
    taf_mu: float = 1.0
    gamma: float = 0.7
    k0: float = 330.0


@dataclass
class SweepConfig:
    kind: str = "retinex"
    alphas: list = field(default_factory=lambda: [10.0 ** k for k in range(-3, 4)])
    betas: list = field(default_factory=lambda: [10.0 ** (k / 2.0) for k in range(0, 7)])
    models: list = field(default_factory=lambda: list(RETINEX_MODELS))
    lams: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1])
    rates: list = field(default_factory=lambda: [0.5, 1.0])
    seeds: list = field(default_factory=lambda: [0])
    snrs: list = field(default_factory=lambda: [math.inf])
    solvers: list = field(default_factory=lambda: ["lm", "wirtinger", "taf", "fienup"])
    inits: list = field(default_factory=lambda: ["spectral", "orthogonality", "random"])


@dataclass
class CompareConfig:
    solvers: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    lams: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    """Everything one run needs; every random draw derives from ``seed``."""

    task: str = "reconstruct"
    name: str = "run"
    seed: int = 0
    output: str = "out"
    snr_db: float = math.inf
    scene: SceneConfig = field(default_factory=SceneConfig)
    masks: MaskConfig = field(default_factory=MaskConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    calibrate: CalibrationConfig = field(default_factory=CalibrationConfig)
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    source: str = "<string>"

    @property
    def mask_seed(self) -> int:
        return self.seed if self.masks.seed is None else self.masks.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d

    def to_ini(self) -> str:
        """Canonical text form; loading it gives back an equal configuration."""
        lines = ["[experiment]"]
        for key in ("task", "name", "seed", "output"):
            lines.append(f"{key} = {_fmt(getattr(self, key))}")
        lines += ["", "[noise]", f"snr_db = {_fmt(self.snr_db)}"]
        for section in ("scene", "masks", "physics", "solver", "calibrate", "phase", "sweep", "compare"):
            lines += ["", f"[{section}]"]
            for key, value in asdict(getattr(self, section)).items():
                if section == "compare" and key == "lams":
                    lines.extend(f"lam_{k} = {_fmt(v)}" for k, v in sorted(value.items()))
                    continue
                if value is None:
                    continue
                lines.append(f"{key} = {_fmt(value)}")
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


class _Reader:
    """Typed access to a parsed INI file that reports file, line and field on errors."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            self.parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: {exc}") from None
        self.lines = self._index(text)
        self.errors = []
        self.used = set()

    @staticmethod
    def _index(text):
        lines, section = {}, None
        for number, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.strip()
            head = re.match(r"^\[(.+)\]$", stripped)
            if head:
                section = head.group(1).strip()
                lines[(section, None)] = number
            elif section and "=" in stripped and not stripped.startswith((";", "#")):
                lines[(section, stripped.split("=", 1)[0].strip().lower())] = number
        return lines

    def where(self, section, key=None) -> str:
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def fail(self, section, key, message):
        self.errors.append(f"{self.where(section, key)}: {message}")

    def get(self, section, key, default, kind):
        if not self.parser.has_option(section, key):
            return default
        self.used.add((section, key))
        raw = self.parser.get(section, key).strip()
        try:
            return kind(raw)
        except (TypeError, ValueError) as exc:
            self.fail(section, key, f"cannot parse {raw!r}: {exc}")
            return default


def _boolean(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _optional_int(raw: str):
    return None if raw.lower() in ("", "none") else int(raw)


def _float_list(raw: str) -> list:
    return [float(v) for v in raw.replace(",", " ").split()]


def _int_list(raw: str) -> list:
    return [int(v) for v in raw.replace(",", " ").split()]


def _str_list(raw: str) -> list:
    return [v for v in raw.replace(",", " ").split()]


_KINDS = {bool: _boolean, int: int, float: float, str: str}


def _fill(reader: _Reader, section: str, obj, list_kinds: dict):
    for key, current in asdict(obj).items():
        if key in list_kinds:
            value = reader.get(section, key, current, list_kinds[key])
        elif key == "seed" and section == "masks":
            value = reader.get(section, key, current, _optional_int)
        else:
            value = reader.get(section, key, current, _KINDS[type(current)])
        setattr(obj, key, value)


def _check(reader, cond, section, key, message):
    if not cond:
        reader.fail(section, key, message)


def _validate(cfg: ExperimentConfig, r: _Reader):
    _check(r, cfg.task in TASKS, "experiment", "task", f"unknown task {cfg.task!r}; expected one of {TASKS}")
    _check(r, cfg.seed >= 0, "experiment", "seed", "seed must be non-negative")
    sc = cfg.scene
    _check(r, sc.kind in PHANTOM_KINDS, "scene", "kind", f"unknown phantom {sc.kind!r}; expected one of {PHANTOM_KINDS}")
    _check(r, sc.d1 >= 2 and sc.d2 >= 2, "scene", "d1", "grid must be at least 2x2")
    _check(r, 0 <= sc.background < 1, "scene", "background", "background must lie in [0, 1)")
    _check(r, sc.beam_sigma > 0, "scene", "beam_sigma", "beam_sigma must be positive")
    _check(r, 0 < sc.beam_peak <= 1, "scene", "beam_peak", "beam_peak must lie in (0, 1]")
    mk = cfg.masks
    _check(r, mk.kind in MASK_KINDS, "masks", "kind", f"unknown mask kind {mk.kind!r}; expected one of {MASK_KINDS}")
    _check(r, mk.rate > 0, "masks", "rate", "sampling rate must be positive")
    _check(r, 0 < mk.open_probability < 1, "masks", "open_probability", "must lie strictly between 0 and 1")
    _check(r, 0 < mk.depth <= 1, "masks", "depth", "depth must lie in (0, 1]")
    _check(r, mk.offset >= 0 and mk.offset + mk.depth <= 1 + 1e-12, "masks", "offset",
           "need offset >= 0 and offset + depth <= 1")
    if mk.kind == "circulant":
        _check(r, mk.rate <= 1, "masks", "rate", "circulant masks support rates up to 1")
    ph = cfg.physics
    for key in ("wavelength", "pitch"):
        _check(r, getattr(ph, key) > 0, "physics", key, f"{key} must be positive")
    for key in ("distance_object_mask", "distance_mask_detector"):
        _check(r, getattr(ph, key) >= 0, "physics", key, f"{key} must be non-negative")
    sv = cfg.solver
    _check(r, sv.kind in SOLVER_KINDS, "solver", "kind", f"unknown solver {sv.kind!r}; expected one of {SOLVER_KINDS}")
    _check(r, sv.kind == "nnls" or sv.lam > 0, "solver", "lam", "lam must be positive")
    _check(r, sv.max_iters >= 1, "solver", "max_iters", "max_iters must be at least 1")
    _check(r, sv.bregman >= 0, "solver", "bregman", "bregman must be non-negative")
    ca = cfg.calibrate
    _check(r, ca.method in CALIBRATION_METHODS, "calibrate", "method",
           f"unknown method {ca.method!r}; expected one of {CALIBRATION_METHODS}")
    _check(r, ca.model in RETINEX_MODELS, "calibrate", "model", f"unknown model {ca.model!r}")
    for key in ("alpha", "beta", "lambda_r", "recon_lam"):
        _check(r, getattr(ca, key) > 0, "calibrate", key, f"{key} must be positive")
    pz = cfg.phase
    _check(r, pz.solver in PHASE_SOLVERS, "phase", "solver", f"unknown solver {pz.solver!r}; expected one of {PHASE_SOLVERS}")
    _check(r, pz.init in INIT_KINDS, "phase", "init", f"unknown init {pz.init!r}; expected one of {INIT_KINDS}")
    _check(r, pz.model in MODELS, "phase", "model", f"unknown model {pz.model!r}; expected one of {MODELS}")
    _check(r, pz.reg in ("none", "tv"), "phase", "reg", "reg must be none or tv")
    _check(r, pz.gamma > 0, "phase", "gamma", "gamma must be positive")
    _check(r, pz.reg_lambda >= 0, "phase", "reg_lambda", "reg_lambda must be non-negative")
    sw = cfg.sweep
    _check(r, sw.kind in SWEEP_KINDS, "sweep", "kind", f"unknown sweep {sw.kind!r}; expected one of {SWEEP_KINDS}")
    for key in ("alphas", "betas", "lams", "rates"):
        _check(r, all(v > 0 for v in getattr(sw, key)), "sweep", key, f"{key} must be positive")
    _check(r, all(m in RETINEX_MODELS for m in sw.models), "sweep", "models", f"models must be in {RETINEX_MODELS}")
    _check(r, all(s in PHASE_SOLVERS for s in sw.solvers), "sweep", "solvers", f"solvers must be in {PHASE_SOLVERS}")
    _check(r, all(i in INIT_KINDS for i in sw.inits), "sweep", "inits", f"inits must be in {INIT_KINDS}")
    cp = cfg.compare
    for s in cp.solvers:
        _check(r, s in SOLVER_KINDS, "compare", "solvers", f"unknown solver {s!r}; expected one of {SOLVER_KINDS}")
    _check(r, all(v > 0 for v in cp.rates), "compare", "rates", "rates must be positive")


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and validate; all problems are reported together in one :class:`ConfigurationError`."""
    r = _Reader(text, source)
    cfg = ExperimentConfig(source=source)
    known = {"experiment", "noise", "scene", "masks", "physics", "solver", "calibrate", "phase", "sweep", "compare"}
    for section in r.parser.sections():
        if section not in known:
            r.fail(section, None, f"unknown section; expected one of {sorted(known)}")
    cfg.task = r.get("experiment", "task", cfg.task, str)
    cfg.name = r.get("experiment", "name", cfg.name, str)
    cfg.seed = r.get("experiment", "seed", cfg.seed, int)
    cfg.output = r.get("experiment", "output", cfg.output, str)
    cfg.snr_db = r.get("noise", "snr_db", cfg.snr_db, float)
    _fill(r, "scene", cfg.scene, {})
    _fill(r, "masks", cfg.masks, {})
    _fill(r, "physics", cfg.physics, {})
    _fill(r, "solver", cfg.solver, {})
    _fill(r, "calibrate", cfg.calibrate, {})
    _fill(r, "phase", cfg.phase, {})
    _fill(r, "sweep", cfg.sweep, {"alphas": _float_list, "betas": _float_list, "models": _str_list,
                                  "lams": _float_list, "rates": _float_list, "seeds": _int_list,
                                  "snrs": _float_list, "solvers": _str_list, "inits": _str_list})
    cfg.compare.solvers = r.get("compare", "solvers", [], _str_list)
    cfg.compare.rates = r.get("compare", "rates", [], _float_list)
    if r.parser.has_section("compare"):
        for key in r.parser.options("compare"):
            if key.startswith("lam_"):
                cfg.compare.lams[key[4:]] = r.get("compare", key, None, float)
    for section in r.parser.sections():
        if section not in known:
            continue
        for key in r.parser.options(section):
            if (section, key) not in r.used:
                r.fail(section, key, "unknown key")
    _validate(cfg, r)
    if r.errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(r.errors))
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read an INI file; unreadable files raise :class:`OSError`."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))

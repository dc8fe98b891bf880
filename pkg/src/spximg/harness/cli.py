"""Command-line front end: ``spximg <subcommand> --config <path> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from ..errors import ConfigurationError, InvalidArgumentError, SolverError
from ..imageio import read_pgm, read_raster
from ..metrics import evaluate
from . import pipeline
from .config import load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

RUN_COMMANDS = ("run", "simulate", "reconstruct", "calibrate", "phase", "sweep", "compare")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _jobs(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("jobs must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spximg", description="Single-pixel camera experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run the task named in the config",
        "simulate": "write the scene, masks and measurements",
        "reconstruct": "linear reconstruction",
        "calibrate": "beam self-calibration",
        "phase": "phase retrieval",
        "sweep": "parameter sweep (retinex, lambda or phase)",
        "compare": "solver comparison table over sampling rates",
    }
    for name in RUN_COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=_seed, help="experiment seed (overrides the config)")
        p.add_argument("--jobs", type=_jobs, default=1, help="worker processes for sweeps")
        p.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    p = sub.add_parser("metrics", help="compare two raster images")
    p.add_argument("reference", help="reference image (.txt raster or .pgm)")
    p.add_argument("candidate", help="candidate image (.txt raster or .pgm)")
    p.add_argument("--data-range", type=float, default=1.0, help="dynamic range for PSNR/SSIM")
    return parser


def _read_image(path: str):
    return read_pgm(path) if path.lower().endswith(".pgm") else read_raster(path)


def _metrics(args) -> int:
    ref, cand = _read_image(args.reference), _read_image(args.candidate)
    report = evaluate(ref, cand, ref.shape, data_range=args.data_range)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def _execute(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output=args.out)
    if args.dry_run:
        sys.stdout.write(cfg.to_ini())
        return EXIT_OK
    command = args.command
    if command == "sweep":
        summary = pipeline.run_sweep(cfg, cfg.output, jobs=args.jobs)
        print(json.dumps(summary, sort_keys=True))
    elif command == "compare":
        rows = pipeline.run_compare(cfg, cfg.output)
        for row in rows:
            flag = "*" if row["best"] else " "
            print(f"{flag} rate={row['sampling_rate']:<6g} {row['solver']:<10s} psnr={row['psnr_db']:.2f} "
                  f"ssim={row['ssim']:.4f} rel_mse={row['rel_mse']:.3e}")
    else:
        task = None if command == "run" else command
        metrics = pipeline.run(cfg, cfg.output, task)
        print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "metrics":
            return _metrics(args)
        return _execute(args)
    except (ConfigurationError, InvalidArgumentError) as exc:
        print(f"spximg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"spximg: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"spximg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

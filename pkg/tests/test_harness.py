import csv
import json
import os

import numpy as np
import pytest

from spximg.errors import ConfigurationError
from spximg.harness import ExperimentConfig, load_config, parse_config, run, run_compare, run_sweep
from spximg.harness.cli import main
from spximg.harness.pipeline import MANIFEST, TIMING, simulate

RECONSTRUCT = """
[experiment]
task = reconstruct
seed = 3

[scene]
kind = x_cross
d1 = 16
d2 = 16

[masks]
rate = 1.0

[solver]
kind = nnls
max_iters = 20000
tol = 1e-12
"""

RETINEX_SWEEP = """
[experiment]
task = calibrate

[scene]
kind = x_cross
d1 = 8
d2 = 8
background = 0.2
beam = true
beam_sigma = 3.0

[sweep]
kind = retinex
models = kimmel
"""

PHASE = """
[experiment]
task = phase
seed = 1

[scene]
kind = pi_glyph
d1 = 8
d2 = 8

[masks]
rate = 4.0

[phase]
solver = lm
max_iters = 100
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def manifest(out):
    with open(os.path.join(out, MANIFEST)) as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# configuration


def test_defaults_and_roundtrip():
    cfg = parse_config(RECONSTRUCT)
    assert cfg.task == "reconstruct" and cfg.seed == 3
    assert cfg.scene.d1 == 16 and cfg.solver.kind == "nnls"
    again = parse_config(cfg.to_ini())
    assert again.to_dict() == cfg.to_dict()
    assert parse_config("").to_dict() == ExperimentConfig().to_dict()


def test_roundtrip_lists_and_compare_lams():
    cfg = parse_config("[sweep]\nalphas = 0.1, 1.0\nseeds = 1, 2\n[compare]\nsolvers = tv, tikhonov\n"
                       "rates = 0.5\nlam_tv = 0.02\n")
    assert cfg.sweep.alphas == [0.1, 1.0] and cfg.sweep.seeds == [1, 2]
    assert cfg.compare.lams == {"tv": 0.02}
    assert parse_config(cfg.to_ini()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("text,fragment", [
    ("[experiment]\ntask = dance\n", "task"),
    ("[scene]\nd1 = sixteen\n", "d1"),
    ("[masks]\nrate = -1\n", "rate"),
    ("[solver]\nkind = magic\n", "kind"),
    ("[nonsense]\na = 1\n", "nonsense"),
    ("[scene]\ncolour = red\n", "colour"),
    ("[phase]\ngamma = 0\n", "gamma"),
    ("[masks]\nkind = circulant\nrate = 2\n", "circulant"),
    ("not an ini file", ""),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigurationError) as info:
        parse_config(text, "exp.ini")
    assert fragment in str(info.value)


def test_config_errors_name_the_line():
    with pytest.raises(ConfigurationError) as info:
        parse_config("[scene]\nkind = x_cross\nd1 = -4\n[masks]\nrate = 0\n", "exp.ini")
    msg = str(info.value)
    assert "exp.ini" in msg and "d1" in msg and "rate" in msg


def test_load_config_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.ini")


# ---------------------------------------------------------------------------
# pipelines


def test_simulate_is_seeded():
    cfg = parse_config(RECONSTRUCT)
    a, b = simulate(cfg), simulate(cfg)
    np.testing.assert_array_equal(a.y, b.y)
    c = simulate(parse_config(RECONSTRUCT.replace("seed = 3", "seed = 4")))
    assert not np.array_equal(a.y, c.y)


def test_run_reconstruct_full_sampling(tmp_path):
    metrics = run(parse_config(RECONSTRUCT), tmp_path / "out")
    assert metrics["rel_mse"] <= 1e-6
    files = set(os.listdir(tmp_path / "out"))
    assert {"config.ini", "metrics.json", "report.json", "history.csv", "reconstruction.txt", "reconstruction.pgm",
            MANIFEST, TIMING} <= files
    listed = [line.split("  ")[1] for line in manifest(tmp_path / "out").splitlines()]
    assert listed == sorted(listed) and TIMING not in listed and MANIFEST not in listed


def test_run_manifest_is_reproducible(tmp_path):
    cfg = parse_config(RECONSTRUCT)
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    assert manifest(tmp_path / "a") == manifest(tmp_path / "b")


def test_run_phase_real(tmp_path):
    metrics = run(parse_config(PHASE), tmp_path / "out")
    assert metrics["phase_invariant_rel_mse"] <= 1e-6
    assert metrics["rel_mse"] <= 1e-6


def test_run_simulate_writes_measurements(tmp_path):
    cfg = parse_config(RECONSTRUCT)
    info = run(cfg, tmp_path / "out", "simulate")
    assert info == {"m": 256, "n": 256}
    with open(tmp_path / "out" / "measurements.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "y"] and len(rows) == 257


def test_retinex_sweep_grid_shape(tmp_path):
    summary = run_sweep(parse_config(RETINEX_SWEEP), tmp_path / "out")
    assert summary["kimmel"]["cells"] == 49
    for metric in ("psnr", "ssim"):
        with open(tmp_path / "out" / f"retinex_kimmel_{metric}.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 8 and all(len(r) == 8 for r in rows)
        assert rows[0][0] == "alpha\\beta"
        assert [float(r[0]) for r in rows[1:]] == [10.0 ** k for k in range(-3, 4)]


def test_lambda_sweep_parallel_matches_serial(tmp_path):
    text = RECONSTRUCT.replace("kind = nnls", "kind = tv") + "\n[sweep]\nkind = lambda\nlams = 0.01, 0.1\nrates = 0.5\n"
    cfg = parse_config(text)
    run_sweep(cfg, tmp_path / "a", jobs=1)
    run_sweep(cfg, tmp_path / "b", jobs=2)
    assert manifest(tmp_path / "a") == manifest(tmp_path / "b")


def test_compare_tv_beats_tikhonov(tmp_path):
    text = RECONSTRUCT.replace("rate = 1.0", "rate = 0.5\nopen_probability = 0.5") + (
        "\n[compare]\nsolvers = tikhonov, tv\nrates = 0.5\nlam_tv = 0.003\nlam_tikhonov = 0.01\n")
    text = text.replace("[scene]\n", "[scene]\nbeam = true\nbeam_sigma = 6.0\n")
    rows = run_compare(parse_config(text), tmp_path / "out")
    by = {r["solver"]: r for r in rows}
    assert by["tv"]["ssim"] > by["tikhonov"]["ssim"]
    assert by["tv"]["best"] and not by["tikhonov"]["best"]
    assert os.path.exists(tmp_path / "out" / "comparison.csv")


# ---------------------------------------------------------------------------
# command line


def test_cli_dry_run(tmp_path, capsys):
    path = write(tmp_path, RECONSTRUCT)
    assert main(["reconstruct", "--config", path, "--dry-run", "--seed", "9"]) == 0
    out = capsys.readouterr().out
    assert parse_config(out).seed == 9
    assert not os.path.exists(tmp_path / "out")


def test_cli_run_and_metrics(tmp_path, capsys):
    out_dir = tmp_path / "res"
    path = write(tmp_path, RECONSTRUCT)
    assert main(["run", "--config", path, "--out", str(out_dir)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["rel_mse"] <= 1e-6
    ref, cand = str(out_dir / "ground_truth.txt"), str(out_dir / "reconstruction.txt")
    assert main(["metrics", ref, cand]) == 0
    assert json.loads(capsys.readouterr().out)["rel_mse"] <= 1e-6


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "[solver]\nkind = magic\n", "bad.ini")
    assert main(["run", "--config", bad]) == 2
    assert "kind" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 4
    compare = write(tmp_path, "[compare]\nsolvers = tv, warp\n", "cmp.ini")
    assert main(["compare", "--config", compare, "--out", str(tmp_path / "c")]) == 2


def test_cli_rejects_bad_options(tmp_path):
    path = write(tmp_path, RECONSTRUCT)
    for argv in (["run", "--config", path, "--jobs", "0"], ["run", "--config", path, "--seed", "-1"], ["run"]):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2

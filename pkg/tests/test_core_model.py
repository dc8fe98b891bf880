import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spximg import (
    ComplexField,
    ImageGrid,
    MaskEnsemble,
    Measurements,
    SensingOperator,
    add_noise,
    adjoint_measure,
    apply_modulation_depth,
    compose_scene,
    forward_measure,
    fresnel_propagator,
    generate_circulant_masks,
    generate_random_masks,
    make_gaussian_beam,
    make_phantom,
    random_circulant_masks,
)
from spximg.errors import ConfigurationError, DimensionMismatchError, InvalidArgumentError
from spximg.imageio import read_masks, read_pgm, read_raster, write_masks, write_pgm, write_raster

GEOM = dict(wavelength=0.857, pitch=1.0)


# ---------------------------------------------------------------- grids


def test_image_grid_length_checked():
    with pytest.raises(DimensionMismatchError):
        ImageGrid(2, 3, np.zeros(5))


def test_image_grid_nonneg_flag():
    with pytest.raises(InvalidArgumentError):
        ImageGrid(1, 2, [0.0, -1.0], nonneg=True)
    assert ImageGrid(1, 2, [0.0, -1.0]).n == 2


def test_complex_field_roundtrip():
    arr = np.arange(6).reshape(2, 3) * (1 + 1j)
    f = ComplexField.from_array(arr)
    assert f.shape == (2, 3)
    np.testing.assert_array_equal(f.as_array(), arr)


# ---------------------------------------------------------------- phantoms


def test_gradient_phantom_columns():
    img = make_phantom("gradient", 4, 4).as_array()
    for j in range(4):
        np.testing.assert_allclose(img[:, j], j / 3.0, atol=1e-15)


def test_x_cross_symmetries():
    img = make_phantom("x_cross", 16, 16).as_array()
    np.testing.assert_array_equal(img, img.T)
    np.testing.assert_array_equal(img, np.rot90(img, 2))
    assert set(np.unique(img)) == {0.0, 1.0}


def test_pi_glyph_size():
    assert make_phantom("pi_glyph", 30, 30).n == 900


@pytest.mark.parametrize("kind", ["x_cross", "pi_glyph", "siemens_star", "disk"])
def test_phantoms_in_unit_range(kind):
    img = make_phantom(kind, 20, 24, background=0.2).values
    assert img.min() == pytest.approx(0.2) and img.max() == pytest.approx(1.0)


def test_phantom_rejects_bad_arguments():
    with pytest.raises(InvalidArgumentError):
        make_phantom("blob", 16, 16)
    with pytest.raises(InvalidArgumentError):
        make_phantom("x_cross", 4, 4)
    with pytest.raises(InvalidArgumentError):
        make_phantom("disk", 16, 16, background=1.0)


# ---------------------------------------------------------------- beam and scene


def test_beam_peak_at_center():
    beam = make_gaussian_beam(9, 9, center=(4, 4), sigma=2.0, peak=1.0).as_array()
    assert beam[4, 4] == 1.0
    assert beam.max() == 1.0


def test_beam_value_at_sigma():
    beam = make_gaussian_beam(15, 15, center=(7, 7), sigma=3.0, peak=0.8).as_array()
    assert beam[7, 10] == pytest.approx(0.8 * math.exp(-0.5), rel=1e-14)
    assert beam[4, 7] == pytest.approx(0.8 * math.exp(-0.5), rel=1e-14)


def test_beam_sum_matches_direct_summation():
    beam = make_gaussian_beam(64, 64, sigma=8.0)
    c = 31.5
    total = 0.0
    for i in range(64):
        for j in range(64):
            total += math.exp(-((i - c) ** 2 + (j - c) ** 2) / 128.0)
    assert beam.values.sum() == pytest.approx(total, rel=1e-12)


def test_compose_identity_and_absorbing():
    beam = make_gaussian_beam(8, 8, sigma=2.0)
    ones = ImageGrid(8, 8, np.ones(64))
    zeros = ImageGrid(8, 8, np.zeros(64))
    np.testing.assert_array_equal(compose_scene(beam, ones).values, beam.values)
    np.testing.assert_array_equal(compose_scene(beam, zeros).values, 0.0)


def test_compose_matches_loop():
    beam = make_gaussian_beam(32, 32, sigma=6.0).as_array()
    target = make_phantom("x_cross", 32, 32).as_array()
    out = compose_scene(ImageGrid.from_array(beam), ImageGrid.from_array(target)).as_array()
    expected = np.empty((32, 32))
    for i in range(32):
        for j in range(32):
            expected[i, j] = beam[i, j] * target[i, j]
    np.testing.assert_array_equal(out, expected)


def test_compose_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        compose_scene(make_gaussian_beam(8, 8), make_phantom("disk", 8, 9))


# ---------------------------------------------------------------- masks


def test_random_masks_open_fraction():
    masks = generate_random_masks(1000, 25, 40, 0.5, seed=7)
    frac = masks.pattern.mean()
    assert 0.4975 <= frac <= 0.5025


def test_random_masks_deterministic():
    a = generate_random_masks(20, 8, 8, 0.3, seed=3)
    b = generate_random_masks(20, 8, 8, 0.3, seed=3)
    np.testing.assert_array_equal(a.pattern, b.pattern)


@pytest.mark.parametrize("p", [0.0, 1.0])
def test_random_masks_reject_degenerate_probability(p):
    with pytest.raises(InvalidArgumentError):
        generate_random_masks(4, 4, 4, p, seed=0)


def test_circulant_zero_shift_is_kernel():
    kernel = ImageGrid.from_array((np.arange(16).reshape(4, 4) % 3 == 0).astype(float))
    masks = generate_circulant_masks(kernel, [(0, 0)])
    np.testing.assert_array_equal(masks.matrix[0], kernel.values)


def test_circulant_all_shifts_rows_are_cyclic_permutations():
    kernel = ImageGrid.from_array((np.arange(16).reshape(4, 4) % 5 < 2).astype(float))
    shifts = [(i, j) for i in range(4) for j in range(4)]
    mat = generate_circulant_masks(kernel, shifts).matrix
    k0 = kernel.as_array()
    for row, (i, j) in zip(mat, shifts):
        np.testing.assert_array_equal(row.reshape(4, 4), np.roll(k0, (i, j), axis=(0, 1)))
    # every row is a permutation of row 0
    assert all(sorted(r) == sorted(mat[0]) for r in mat)


def test_circulant_duplicate_shifts_rejected():
    kernel = ImageGrid.from_array(np.eye(4))
    with pytest.raises(InvalidArgumentError):
        generate_circulant_masks(kernel, [(0, 0), (4, 4)])


def test_circulant_matches_dense(rng):
    masks = random_circulant_masks(200, 16, 16, 0.5, seed=4)
    dense = MaskEnsemble(16, 16, "dense", pattern=masks.binary_pattern())
    x = rng.standard_normal(256)
    v = rng.standard_normal(200)
    A = dense.matrix.astype(float)
    assert np.abs(masks.apply(x) - A @ x).max() <= 1e-12 * np.abs(A @ x).max()
    assert np.abs(masks.adjoint(v) - A.T @ v).max() <= 1e-12 * np.abs(A.T @ v).max()


def test_modulation_depth_identity_and_values():
    masks = generate_random_masks(5, 4, 4, 0.5, seed=1)
    same = apply_modulation_depth(masks, 1.0, 0.0)
    np.testing.assert_array_equal(same.matrix, masks.matrix)
    degraded = apply_modulation_depth(masks, 0.4, 0.3)
    assert set(np.unique(degraded.matrix)) == {0.3, 0.7}


def test_modulation_depth_scales_measurements(rng):
    masks = generate_random_masks(30, 6, 6, 0.5, seed=2)
    p = rng.random(36)
    ideal = SensingOperator(masks).apply(p)
    scaled = SensingOperator(apply_modulation_depth(masks, 0.4)).apply(p)
    np.testing.assert_allclose(scaled, 0.4 * ideal, rtol=1e-14)


@given(st.floats(0.05, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_modulation_depth_linearity(depth, offset_frac, seed):
    offset = offset_frac * (1.0 - depth)
    masks = generate_random_masks(12, 5, 5, 0.5, seed=seed)
    p = np.random.default_rng(seed).random(25)
    ideal = SensingOperator(masks).apply(p)
    got = SensingOperator(apply_modulation_depth(masks, depth, offset)).apply(p)
    np.testing.assert_allclose(got, depth * ideal + offset * p.sum(), rtol=1e-12, atol=1e-12)


def test_modulation_depth_rejects_bad_values():
    masks = generate_random_masks(2, 4, 4, 0.5, seed=0)
    with pytest.raises(InvalidArgumentError):
        apply_modulation_depth(masks, 0.0)
    with pytest.raises(InvalidArgumentError):
        apply_modulation_depth(masks, 0.8, 0.3)


# ---------------------------------------------------------------- measurement


def _single(pattern, d1, d2):
    return MaskEnsemble(d1, d2, "dense", pattern=np.asarray(pattern, dtype=bool).reshape(1, -1))


def test_single_open_subpixel_reads_pixel(rng):
    p = rng.random(16)
    pattern = np.zeros(16, dtype=bool)
    pattern[5] = True
    y = forward_measure(SensingOperator(_single(pattern, 4, 4)), ImageGrid(4, 4, p)).y
    assert y[0] == p[5]


def test_all_open_mask_integrates(rng):
    p = rng.random(16)
    y = forward_measure(SensingOperator(_single(np.ones(16), 4, 4)), ImageGrid(4, 4, p)).y
    assert y[0] == pytest.approx(p.sum(), rel=1e-15)


def test_intensity_mode_without_propagation_squares_sum(rng):
    p = rng.random(16)
    op = SensingOperator(_single(np.ones(16), 4, 4), mode="intensity")
    assert forward_measure(op, p).y[0] == pytest.approx(p.sum() ** 2, rel=1e-14)


def test_intensity_mode_with_zero_distance_propagators(rng):
    p = rng.random(64)
    ident = (fresnel_propagator(8, 8, distance=0.0, **GEOM), fresnel_propagator(8, 8, distance=0.0, **GEOM))
    op = SensingOperator(_single(np.ones(64), 8, 8), ident, mode="intensity")
    assert forward_measure(op, p).y[0] == pytest.approx(p.sum() ** 2, rel=1e-12)


def test_single_mask_adjoint_is_pattern():
    pattern = np.arange(16) % 3 == 0
    out = adjoint_measure(SensingOperator(_single(pattern, 4, 4)), np.array([1.0]))
    np.testing.assert_array_equal(out, pattern.astype(float))


def _adjoint_gap(op, rng, complex_data):
    x = rng.standard_normal(op.n)
    if complex_data:
        x = x + 1j * rng.standard_normal(op.n)
        v = rng.standard_normal(op.m) + 1j * rng.standard_normal(op.m)
    else:
        v = rng.standard_normal(op.m)
    lhs = np.vdot(v, op.apply(x))
    rhs = np.vdot(op.adjoint(v), x)
    return abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(v))


@pytest.mark.parametrize("storage", ["dense", "circulant"])
@pytest.mark.parametrize("diffraction", [False, True])
def test_adjoint_identity(storage, diffraction, rng):
    if storage == "dense":
        masks = generate_random_masks(50, 12, 12, 0.5, seed=9)
    else:
        masks = random_circulant_masks(50, 12, 12, 0.5, seed=9)
    masks = apply_modulation_depth(masks, 0.6, 0.2)
    pair = None
    if diffraction:
        pair = (fresnel_propagator(12, 12, distance=3.0, **GEOM), fresnel_propagator(12, 12, distance=5.0, **GEOM))
    op = SensingOperator(masks, pair)
    assert _adjoint_gap(op, rng, complex_data=diffraction) <= 1e-10


def test_adjoint_requires_linear_mode():
    from spximg.errors import UnsupportedModeError
    op = SensingOperator(generate_random_masks(3, 4, 4, 0.5, seed=0), mode="intensity")
    with pytest.raises(UnsupportedModeError):
        op.adjoint(np.ones(3))


def test_forward_measure_size_checked():
    op = SensingOperator(generate_random_masks(3, 4, 4, 0.5, seed=0))
    with pytest.raises(DimensionMismatchError):
        forward_measure(op, np.ones(15))


def test_row_norms_match_dense(rng):
    masks = apply_modulation_depth(generate_random_masks(20, 8, 8, 0.5, seed=5), 0.7, 0.1)
    pair = (fresnel_propagator(8, 8, distance=2.0, **GEOM), fresnel_propagator(8, 8, distance=4.0, **GEOM))
    for op in (SensingOperator(masks), SensingOperator(masks, pair)):
        B = op.matrix()
        np.testing.assert_allclose(op.row_norms_squared(), (np.abs(B) ** 2).sum(axis=1), rtol=1e-10)


def test_diffraction_matrix_matches_explicit_rows():
    # rows B_i = 1^T D_md diag(A_i) D_om built from dense propagator matrices
    masks = generate_random_masks(6, 6, 6, 0.5, seed=8)
    d_om = fresnel_propagator(6, 6, distance=2.0, **GEOM)
    d_md = fresnel_propagator(6, 6, distance=3.0, **GEOM)
    op = SensingOperator(masks, (d_om, d_md))
    Dom, Dmd = d_om.matrix(), d_md.matrix()
    rows = [np.ones(36) @ Dmd @ np.diag(a) @ Dom for a in masks.matrix.astype(float)]
    np.testing.assert_allclose(op.matrix(), np.array(rows), atol=1e-12)


# ---------------------------------------------------------------- propagation


def test_zero_distance_is_identity(rng):
    d = fresnel_propagator(10, 10, distance=0.0, **GEOM)
    u = rng.standard_normal(100) + 1j * rng.standard_normal(100)
    np.testing.assert_allclose(d.apply(u), u, atol=1e-14)


def test_semigroup(rng):
    u = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    d1 = fresnel_propagator(16, 16, distance=4.0, **GEOM)
    d2 = fresnel_propagator(16, 16, distance=6.0, **GEOM)
    d12 = fresnel_propagator(16, 16, distance=10.0, **GEOM)
    np.testing.assert_allclose(d1.apply(d2.apply(u)), d12.apply(u), atol=1e-9)
    np.testing.assert_allclose(d1.compose(d2).apply(u), d12.apply(u), atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 10.0))
def test_unitarity(seed, distance):
    r = np.random.default_rng(seed)
    d = fresnel_propagator(12, 12, distance=distance, wavelength=0.857, pitch=1.0)
    u = r.standard_normal(144) + 1j * r.standard_normal(144)
    assert np.linalg.norm(d.apply(u)) ** 2 / np.linalg.norm(u) ** 2 == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(d.adjoint(d.apply(u)), u, atol=1e-10)


def test_evanescent_grid_rejected():
    with pytest.raises(ConfigurationError):
        fresnel_propagator(8, 8, wavelength=3.0, distance=1.0, pitch=1.0)


# ---------------------------------------------------------------- noise


def test_noise_infinite_snr_is_identity():
    meas = Measurements(np.arange(5.0))
    assert add_noise(meas, math.inf, seed=1) is meas


def test_noise_realized_snr():
    y = np.random.default_rng(0).random(10_000)
    noisy = add_noise(Measurements(y), 20.0, seed=3)
    realized = 20 * math.log10(np.linalg.norm(y) / np.linalg.norm(noisy.y - y))
    assert 19.9 <= realized <= 20.1
    assert noisy.snr_db == pytest.approx(realized)


def test_noise_deterministic():
    y = np.linspace(1, 2, 50)
    a = add_noise(Measurements(y), 10.0, seed=5).y
    b = add_noise(Measurements(y), 10.0, seed=5).y
    c = add_noise(Measurements(y), 10.0, seed=6).y
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- file formats


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_roundtrip(tmp_path, bits):
    img = make_phantom("x_cross", 12, 10)
    path = tmp_path / "a.pgm"
    write_pgm(path, img, bits=bits)
    back = read_pgm(path)
    assert back.shape == (12, 10)
    np.testing.assert_allclose(back.values, img.values)


def test_raster_roundtrip_is_lossless(tmp_path, rng):
    img = ImageGrid(3, 5, rng.standard_normal(15))
    write_raster(tmp_path / "r.txt", img)
    back = read_raster(tmp_path / "r.txt")
    np.testing.assert_array_equal(back.values, img.values)
    assert (tmp_path / "r.txt").read_text().splitlines()[0] == "3 5"


@pytest.mark.parametrize("kind", ["dense", "circulant"])
def test_mask_file_roundtrip(tmp_path, kind):
    if kind == "dense":
        masks = generate_random_masks(7, 5, 3, 0.5, seed=11)
    else:
        masks = random_circulant_masks(7, 5, 3, 0.5, seed=11)
    masks = apply_modulation_depth(masks, 0.5, 0.25)
    write_masks(tmp_path / "m.txt", masks)
    back = read_masks(tmp_path / "m.txt")
    assert back.storage == kind and back.seed == 11
    np.testing.assert_array_equal(back.matrix, masks.matrix)
    assert (tmp_path / "m.txt").read_text().split("\n")[0] == f"7 15 {kind} 11"

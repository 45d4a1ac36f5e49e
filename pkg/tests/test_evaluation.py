import csv

import numpy as np
import pytest
import scipy.ndimage

from dawgan.errors import (
    ConfigurationError,
    DegenerateInputError,
    DomainError,
    InsufficientTextureError,
    ShapeError,
)
from dawgan.evaluation import (
    COMPARISON_COLUMNS,
    SWEEP_COLUMNS,
    estimate_noise_level,
    nmse,
    psnr,
    run_comparison,
    run_noise_sweep,
    ssim,
)
from dawgan.phantom import generate_phantom_volume, split_dataset


def phantom_slice(seed, size=128):
    return np.abs(generate_phantom_volume(3, size, seed=seed)[1])


# ----------------------------------------------------------------------- psnr


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).uniform(-1, 1, (32, 32))
    assert psnr(x, x) == float("inf")


def test_psnr_constant_offset_closed_forms():
    # inputs live in [-1, 1]; the metric maps to [0, 1], so an offset of 0.2
    # here becomes 0.1 after mapping -> MSE 0.01 -> 20 dB
    ref = np.zeros((64, 64))
    assert psnr(ref, ref + 0.2) == pytest.approx(20.0, abs=1e-4)
    assert psnr(ref, ref + 0.02) == pytest.approx(40.0, abs=1e-4)


def test_psnr_symmetry_and_monotonicity():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (16, 16))
    b = rng.uniform(-1, 1, (16, 16))
    assert psnr(a, b) == psnr(b, a)
    base = np.zeros((16, 16))
    assert psnr(base, base + 0.4) < psnr(base, base + 0.2)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((8, 8)), np.zeros((8, 9)))


# ----------------------------------------------------------------------- ssim


def test_ssim_identical_is_one():
    x = np.random.default_rng(2).uniform(-1, 1, (32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_detects_any_difference():
    x = np.random.default_rng(3).uniform(-1, 1, (32, 32))
    y = x.copy()
    y[5, 5] += 0.1
    assert ssim(x, y) < 1.0


def test_ssim_zero_variance_closed_form():
    # constants 0.0 and -0.5 map to 0.5 and 0.25; variance terms cancel and
    # SSIM reduces to (2ab + C1) / (a^2 + b^2 + C1) = 0.2501 / 0.3126
    a = np.full((32, 32), 0.0)
    b = np.full((32, 32), -0.5)
    assert ssim(a, b) == pytest.approx(0.2501 / 0.3126, abs=1e-4)


def test_ssim_symmetry():
    rng = np.random.default_rng(4)
    a = rng.uniform(-1, 1, (24, 24))
    b = rng.uniform(-1, 1, (24, 24))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_rejects_images_smaller_than_window():
    with pytest.raises(DomainError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ----------------------------------------------------------------------- nmse


def test_nmse_closed_forms():
    x = np.random.default_rng(5).uniform(0.1, 1, (16, 16))
    assert nmse(x, x) == 0.0
    assert nmse(x, np.zeros_like(x)) == pytest.approx(1.0, abs=1e-12)
    assert nmse(x, 2 * x) == pytest.approx(1.0, abs=1e-12)


def test_nmse_zero_reference_rejected():
    with pytest.raises(DegenerateInputError):
        nmse(np.zeros((16, 16)), np.ones((16, 16)))


# ------------------------------------------------------------- noise estimate


def test_noise_estimate_noiseless_phantom():
    for seed in range(3):
        assert estimate_noise_level(phantom_slice(seed)) <= 0.005


def test_noise_estimate_recovers_sigma():
    for sigma in (0.05, 0.1):
        ests = []
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            img = phantom_slice(seed) + rng.normal(0.0, sigma, (128, 128))
            ests.append(estimate_noise_level(img))
        assert abs(np.mean(ests) - sigma) <= 0.2 * sigma


def test_noise_estimate_pure_noise():
    rng = np.random.default_rng(7)
    est = estimate_noise_level(rng.normal(0.0, 0.1, (256, 256)))
    assert abs(est - 0.1) <= 0.01


def test_noise_estimate_scale_consistency():
    rng = np.random.default_rng(42)
    noisy = phantom_slice(3) + rng.normal(0.0, 0.05, (128, 128))
    base = estimate_noise_level(noisy)
    for a in (0.5, 2.0):
        assert abs(estimate_noise_level(a * noisy) - a * base) <= 0.1 * a * base


def test_noise_estimate_refuses_pure_texture():
    # a smooth random field has gradient energy everywhere, so no patch set is
    # consistent with white noise at any level
    field = scipy.ndimage.gaussian_filter(
        np.random.default_rng(0).normal(0.0, 1.0, (48, 48)), 2.0)
    with pytest.raises(InsufficientTextureError):
        estimate_noise_level(field)


def test_noise_estimate_input_contracts():
    with pytest.raises(DomainError):
        estimate_noise_level(np.zeros((16, 16)))
    with pytest.raises(ShapeError):
        estimate_noise_level(np.zeros((3, 64, 64)))


# ----------------------------------------------------------------- comparison


@pytest.fixture(scope="module")
def small_volumes():
    return [generate_phantom_volume(3, 32, seed=s) for s in range(2)]


def test_comparison_schema_and_zero_fill_ordering(small_volumes):
    report = run_comparison(["zero-fill"], small_volumes, ratios=(0.2, 0.6), seed=0)
    assert set(report.rows) == {("zero-fill", r, m)
                                for r in (0.2, 0.6) for m in ("psnr", "ssim", "nmse")}
    for cell in report.rows.values():
        assert cell[2] == 6  # 2 volumes x 3 slices
    assert report.rows[("zero-fill", 0.2, "psnr")][0] < report.rows[("zero-fill", 0.6, "psnr")][0]
    assert report.metadata["seed"] == 0


def test_comparison_full_sampling_sentinels(small_volumes):
    report = run_comparison(["zero-fill"], small_volumes, ratios=(1.0,), seed=0)
    mean, std, n = report.rows[("zero-fill", 1.0, "psnr")]
    assert mean == float("inf") and std == 0.0 and n == 6
    assert report.rows[("zero-fill", 1.0, "ssim")][0] == pytest.approx(1.0, abs=1e-12)
    assert report.rows[("zero-fill", 1.0, "nmse")][0] == 0.0


def test_comparison_network_method(small_volumes, tmp_path):
    from dawgan.losses import LossWeights
    from dawgan.model import CriticConfig, GeneratorConfig
    from dawgan.training import TrainConfig, train

    cfg = TrainConfig(n_critic=1, batch_size=2, max_generator_steps=1, seed=0,
                      augment=False, weights=LossWeights(gamma=0.0),
                      generator=GeneratorConfig(base_channels=2, depth=1,
                                                n_unrolled_iterations=1, window_T=3),
                      critic=CriticConfig(channels=(4,)))
    ckpt, _ = train(cfg, small_volumes)
    report = run_comparison(["zero-fill", "dawgan"], small_volumes, ratios=(0.4,),
                            seed=0, checkpoints={"dawgan": ckpt})
    mean, _std, n = report.rows[("dawgan", 0.4, "psnr")]
    assert np.isfinite(mean) and n == 6


def test_comparison_missing_checkpoint(small_volumes):
    with pytest.raises(ConfigurationError):
        run_comparison(["dawgan"], small_volumes, ratios=(0.3,), seed=0)


def test_comparison_empty_test_split(small_volumes):
    split = split_dataset([0, 1], (1.0, 0.0, 0.0), seed=0)
    with pytest.raises(DomainError):
        run_comparison(["zero-fill"], small_volumes, split=split, ratios=(0.3,))


def test_comparison_csv_schema(small_volumes, tmp_path):
    path = tmp_path / "comparison.csv"
    run_comparison(["zero-fill"], small_volumes, ratios=(0.3,), seed=0, csv_path=path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(COMPARISON_COLUMNS)
    assert len(rows) == 1 + 3  # one method x one ratio x three metrics
    assert all(len(r) == len(COMPARISON_COLUMNS) for r in rows[1:])


def test_comparison_deterministic(small_volumes):
    a = run_comparison(["zero-fill"], small_volumes, ratios=(0.3,), seed=9)
    b = run_comparison(["zero-fill"], small_volumes, ratios=(0.3,), seed=9)
    assert a.rows == b.rows


# ---------------------------------------------------------------- noise sweep


def test_sweep_zero_sigma_matches_comparison(small_volumes):
    report = run_comparison(["zero-fill"], small_volumes, ratios=(0.3,), seed=3)
    sweep = run_noise_sweep(["zero-fill"], small_volumes, ratios=(0.3,),
                            sigma_grid=(0.0, 0.05), seed=3)
    cell = sweep.rows[("zero-fill", 0.3, 0.0)]
    mean, std, _n = report.rows[("zero-fill", 0.3, "psnr")]
    assert cell["psnr_mean"] == mean and cell["psnr_std"] == std


def test_sweep_grid_must_increase(small_volumes):
    with pytest.raises(DomainError):
        run_noise_sweep(["zero-fill"], small_volumes, ratios=(0.3,),
                        sigma_grid=(0.1, 0.1), seed=0)


def test_sweep_csv_schema(small_volumes, tmp_path):
    run_noise_sweep(["zero-fill"], small_volumes, ratios=(0.3,),
                    sigma_grid=(0.0, 0.05), seed=0, out_dir=tmp_path)
    with open(tmp_path / "noise_sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(SWEEP_COLUMNS)
    assert len(rows) == 1 + 2  # one method x one ratio x two sigmas
    sigmas = [float(r[2]) for r in rows[1:]]
    assert sigmas == sorted(sigmas)


def test_sweep_residual_counts_consistent(small_volumes):
    sweep = run_noise_sweep(["zero-fill"], small_volumes, ratios=(0.3,),
                            sigma_grid=(0.05, 0.1), seed=0)
    for cell in sweep.rows.values():
        if cell["residual_n"] == 0:
            assert np.isnan(cell["residual_sigma_mean"])
        else:
            assert np.isfinite(cell["residual_sigma_mean"])

import numpy as np
import numpy.testing as npt
import pytest

from dawgan.baselines import AdmmConfig, reconstruct_admm_tv, reconstruct_zero_fill, tv_norm
from dawgan.errors import ConfigurationError, ShapeError
from dawgan.evaluation import psnr
from dawgan.kspace import forward_fft2c, make_mask, zero_fill_recon
from dawgan.phantom import generate_phantom_volume


def test_tv_of_constant_is_zero():
    assert tv_norm(np.full((12, 9), 0.4)) == pytest.approx(0.0)


def test_tv_of_unit_ramp():
    # x-ramp with unit steps: H rows x (W-1) unit forward differences
    H, W = 7, 11
    ramp = np.tile(np.arange(W, dtype=float), (H, 1))
    assert tv_norm(ramp) == pytest.approx(H * (W - 1) * 1.0)


def test_tv_homogeneity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(16, 16))
    assert tv_norm(2.5 * x) == pytest.approx(2.5 * tv_norm(x))
    assert tv_norm(-2.5 * x) == pytest.approx(2.5 * tv_norm(x))


def test_admm_config_validation():
    with pytest.raises(ConfigurationError):
        AdmmConfig(lambda_tv=0.0).validate()
    with pytest.raises(ConfigurationError):
        AdmmConfig(iters=20000).validate()
    AdmmConfig().validate()


def test_admm_full_mask_tiny_lambda_recovers_truth():
    x = generate_phantom_volume(3, 32, seed=5)[1]
    mask = make_mask((32, 32), 1.0)
    y = forward_fft2c(x)
    rec = reconstruct_admm_tv(y, mask, AdmmConfig(lambda_tv=1e-8, iters=40))
    npt.assert_allclose(rec, np.abs(x), atol=1e-3)


def test_admm_objective_non_increasing():
    x = generate_phantom_volume(3, 48, seed=6)[1]
    mask = make_mask((48, 48), 0.3, seed=2)
    y = forward_fft2c(x) * mask.data
    _, history = reconstruct_admm_tv(y, mask, AdmmConfig(iters=60), return_history=True)
    diffs = np.diff(history)
    assert (diffs <= 1e-8).all()


def test_admm_beats_zero_fill_at_30_percent():
    x = generate_phantom_volume(3, 64, seed=7)[1]
    mask = make_mask((64, 64), 0.3, seed=3)
    y = forward_fft2c(x) * mask.data
    ref = 2.0 * np.abs(x) - 1.0
    p_zf = psnr(ref, 2.0 * zero_fill_recon(y) - 1.0)
    p_admm = psnr(ref, 2.0 * reconstruct_admm_tv(y, mask, AdmmConfig(lambda_tv=1e-3, iters=200)) - 1.0)
    assert p_admm >= p_zf


def test_admm_deterministic():
    x = generate_phantom_volume(3, 32, seed=8)[1]
    mask = make_mask((32, 32), 0.4, seed=4)
    y = forward_fft2c(x) * mask.data
    a = reconstruct_admm_tv(y, mask, AdmmConfig(iters=30))
    b = reconstruct_admm_tv(y, mask, AdmmConfig(iters=30))
    npt.assert_array_equal(a, b)


def test_admm_shape_mismatch():
    mask = make_mask((32, 32), 0.4)
    with pytest.raises(ShapeError):
        reconstruct_admm_tv(np.zeros((16, 16), dtype=complex), mask)


def test_zero_fill_reexport_matches_kspace():
    x = generate_phantom_volume(3, 32, seed=9)[1]
    mask = make_mask((32, 32), 0.5, seed=5)
    y = forward_fft2c(x) * mask.data
    npt.assert_array_equal(reconstruct_zero_fill(y, mask), zero_fill_recon(y))

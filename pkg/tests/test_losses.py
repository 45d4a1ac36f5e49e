import math

import numpy as np
import numpy.testing as npt
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dawgan.archive import save_archive
from dawgan.errors import (
    ConfigurationError,
    DegenerateInputError,
    DomainError,
    FormatError,
    NumericalError,
    ShapeError,
)
from dawgan.losses import (
    FeatureExtractor,
    LossWeights,
    critic_loss_with_gp,
    loss_fmse,
    loss_gen_adv,
    loss_imse,
    loss_vgg,
    total_loss,
)
from dawgan.ops import fft2c


# ----------------------------------------------------------------- imse/fmse


def test_imse_zero_prediction_is_half():
    x = torch.randn(4, 16, 16, dtype=torch.float64)
    assert loss_imse(x, torch.zeros_like(x)).item() == pytest.approx(0.5)


def test_imse_two_element_example():
    x_t = torch.tensor([1.0, 0.0])
    x_hat = torch.tensor([0.0, 0.0])
    assert loss_imse(x_t, x_hat).item() == pytest.approx(0.5)


def test_imse_identical_is_zero():
    x = torch.randn(2, 8, 8)
    assert loss_imse(x, x).item() == 0.0


def test_imse_batch_is_mean_of_per_sample_ratios():
    a = torch.tensor([[2.0, 0.0], [0.0, 1.0]])[:, None, :]  # (2,1,2) batch of 2
    b = torch.zeros_like(a)
    # per sample: 0.5 * 4/4 and 0.5 * 1/1
    assert loss_imse(a, b).item() == pytest.approx(0.5)


def test_imse_unnormalized():
    x_t = torch.tensor([3.0, 0.0])
    assert loss_imse(x_t, torch.zeros(2), normalized=False).item() == pytest.approx(4.5)


def test_imse_zero_target_degenerate():
    with pytest.raises(DegenerateInputError):
        loss_imse(torch.zeros(4), torch.ones(4))


def test_imse_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_imse(torch.zeros(3), torch.zeros(4))


@settings(deadline=None, max_examples=30)
@given(st.floats(0.1, 10.0), st.integers(0, 2 ** 16))
def test_imse_scale_invariance(scale, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand((3, 6, 6), generator=g, dtype=torch.float64) + 0.1
    y = torch.rand((3, 6, 6), generator=g, dtype=torch.float64)
    assert loss_imse(scale * x, scale * y).item() == pytest.approx(loss_imse(x, y).item(), rel=1e-9)


def test_fmse_double_spectrum_is_half():
    y = fft2c(torch.randn(2, 12, 12, dtype=torch.complex128))
    assert loss_fmse(y, 2.0 * y).item() == pytest.approx(0.5)


def test_fmse_equals_imse_by_parseval():
    g = torch.Generator().manual_seed(5)
    x_t = torch.rand((2, 3, 16, 16), generator=g, dtype=torch.float64)
    x_hat = torch.rand((2, 3, 16, 16), generator=g, dtype=torch.float64)
    i = loss_imse(x_t, x_hat).item()
    f = loss_fmse(fft2c(x_t.to(torch.complex128)), fft2c(x_hat.to(torch.complex128))).item()
    assert abs(i - f) <= 1e-6


def test_fmse_mask_restricts_support():
    y_t = torch.ones(1, 4, 4, dtype=torch.complex128)
    y_hat = torch.zeros_like(y_t)
    mask = torch.zeros(1, 4, 4)
    mask[0, 0, 0] = 1.0
    # only one bin differs under the mask: 0.5 * 1/1
    assert loss_fmse(y_t, y_hat, mask=mask).item() == pytest.approx(0.5)


# ----------------------------------------------------------------- perceptual


def test_feature_extractor_deterministic_and_frozen():
    a = FeatureExtractor(seed=0)
    b = FeatureExtractor(seed=0)
    for (n1, p1), (_n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        npt.assert_array_equal(p1.detach().numpy(), p2.detach().numpy())
        assert not p1.requires_grad, n1
    c = FeatureExtractor(seed=1)
    diffs = [not torch.equal(p1, p2) for p1, p2 in zip(a.parameters(), c.parameters())]
    assert any(diffs)


def test_feature_extractor_shapes():
    ext = FeatureExtractor()
    f = ext(torch.randn(2, 32, 32))
    assert f.shape == (2, 128, 2, 2)
    assert ext.total_stride == 16
    with pytest.raises(ShapeError):
        ext(torch.randn(2, 3, 32, 32))


def test_feature_extractor_archive_round_trip(tmp_path):
    ext = FeatureExtractor(seed=3)
    arrays = {k: v.detach().numpy() for k, v in ext.state_dict().items()}
    p = tmp_path / "feat.bin"
    save_archive(p, arrays, {"purpose": "features"})
    back = FeatureExtractor.from_archive(p)
    x = torch.randn(1, 32, 32)
    npt.assert_allclose(back(x).numpy(), ext(x).numpy())


def test_feature_extractor_archive_missing_param(tmp_path):
    ext = FeatureExtractor(seed=3)
    arrays = {k: v.detach().numpy() for k, v in ext.state_dict().items()}
    arrays.pop(sorted(arrays)[0])
    p = tmp_path / "feat.bin"
    save_archive(p, arrays)
    with pytest.raises(FormatError):
        FeatureExtractor.from_archive(p)


def test_vgg_loss_identical_zero_and_normalization_source():
    ext = FeatureExtractor()
    x = torch.rand(2, 32, 32)
    assert loss_vgg(x, x, ext).item() == pytest.approx(0.0)
    # normalized by the *target* features: swapping arguments changes the value
    y = torch.rand(2, 32, 32)
    assert loss_vgg(x, y, ext).item() != pytest.approx(loss_vgg(y, x, ext).item(), rel=1e-6)


# ---------------------------------------------------------------- adversarial


def test_gen_adv_example():
    assert loss_gen_adv(torch.tensor([1.0, 3.0])).item() == pytest.approx(-2.0)


def test_gen_adv_empty_batch():
    with pytest.raises(DomainError):
        loss_gen_adv(torch.zeros(0))


class LinearSumCritic(torch.nn.Module):
    """f(x) = a * sum(x): gradient norm is a * sqrt(numel per sample)."""

    def __init__(self, a):
        super().__init__()
        self.a = torch.nn.Parameter(torch.tensor(float(a)))

    def forward(self, x):
        return self.a * x.flatten(1).sum(dim=1)


def test_gp_zero_for_unit_gradient_norm():
    n = 2 * 8 * 8
    critic = LinearSumCritic(1.0 / math.sqrt(n))
    real = torch.rand(3, 2, 8, 8)
    fake = torch.rand(3, 2, 8, 8)
    result = critic_loss_with_gp(critic, real, fake, lambda_gp=10.0, seed=0)
    assert result.gp_term.item() == pytest.approx(0.0, abs=1e-9)


def test_gp_equals_lambda_for_gradient_norm_two():
    n = 2 * 8 * 8
    critic = LinearSumCritic(2.0 / math.sqrt(n))
    real = torch.rand(3, 2, 8, 8)
    fake = torch.rand(3, 2, 8, 8)
    result = critic_loss_with_gp(critic, real, fake, lambda_gp=10.0, seed=0)
    assert result.gp_term.item() == pytest.approx(10.0, rel=1e-5)


def test_constant_critic_full_penalty():
    critic = lambda x: torch.zeros(x.shape[0])
    x = torch.rand(4, 1, 8, 8)
    result = critic_loss_with_gp(critic, x, x.clone(), lambda_gp=10.0, seed=1)
    assert result.wasserstein.item() == pytest.approx(0.0)
    assert result.gp_term.item() == pytest.approx(10.0)  # (0 - 1)^2 * lambda
    assert result.total.item() == pytest.approx(10.0)


def test_critic_loss_deterministic_in_seed():
    torch.manual_seed(0)
    from dawgan.model import Critic, CriticConfig

    critic = Critic(CriticConfig(channels=(4, 8)), in_channels=1)
    g = torch.Generator().manual_seed(9)
    real = torch.rand((4, 1, 16, 16), generator=g)
    fake = torch.rand((4, 1, 16, 16), generator=g)
    a = critic_loss_with_gp(critic, real, fake, seed=42)
    b = critic_loss_with_gp(critic, real, fake, seed=42)
    assert a.total.item() == b.total.item()
    c = critic_loss_with_gp(critic, real, fake, seed=43)
    assert a.gp_term.item() != c.gp_term.item()


def test_critic_loss_input_contracts():
    critic = lambda x: x.flatten(1).sum(dim=1)
    with pytest.raises(ShapeError):
        critic_loss_with_gp(critic, torch.zeros(2, 4), torch.zeros(3, 4))
    with pytest.raises(DomainError):
        critic_loss_with_gp(critic, torch.zeros(2, 4), torch.zeros(2, 4), lambda_gp=-1.0)


# --------------------------------------------------------------------- totals


def test_total_loss_worked_example():
    w = LossWeights(alpha=15.0, beta=0.1, gamma=0.0025)
    out = total_loss(w, 0.1, 0.2, 0.4, 0.0)
    assert out.total == pytest.approx(1.521)
    assert (out.imse, out.fmse, out.vgg, out.gen_adv) == (0.1, 0.2, 0.4, 0.0)


def test_total_loss_keeps_graph():
    w = LossWeights()
    imse = torch.tensor(0.3, requires_grad=True)
    out = total_loss(w, imse, torch.tensor(0.0), torch.tensor(0.0), torch.tensor(0.0))
    out.total.backward()
    assert imse.grad is not None


def test_total_loss_rejects_nan_and_inf():
    w = LossWeights()
    with pytest.raises(NumericalError, match="is NaN"):
        total_loss(w, float("nan"), 0.0, 0.0, 0.0)
    with pytest.raises(NumericalError, match="is infinite"):
        total_loss(w, 0.0, float("inf"), 0.0, 0.0)


def test_loss_weights_validation():
    with pytest.raises(ConfigurationError):
        LossWeights(alpha=-1.0).validate()

"""Generator objective (image MSE + frequency MSE + perceptual + adversarial)
and the gradient-penalty critic objective.

Content losses use the normalized form: 0.5 * ||pred - target||^2 / ||target||^2
averaged over the batch, with an unnormalized switch. The perceptual term runs
both images through a frozen convolutional feature extractor (random seed-0
weights by default, replaceable by pretrained weights from an archive).
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn

from .errors import (ConfigurationError, DegenerateInputError, DomainError, FormatError,
                     NumericalError, ShapeError)


@dataclass
class LossWeights:
    alpha: float = 15.0
    beta: float = 0.1
    gamma: float = 0.0025

    def validate(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"loss weight {name} must be finite and >= 0, got {v}")
        return self


@dataclass
class LossBreakdown:
    imse: float
    fmse: float
    vgg: float
    gen_adv: float
    total: float


def _per_sample_energies(target, pred):
    """Squared-error and target-energy sums, one pair per batch sample.

    Tensors with ndim <= 2 are treated as a single sample; otherwise dim 0
    is the batch (so a full image is never split across samples).
    """
    if target.shape != pred.shape:
        raise ShapeError(f"shape mismatch: target {tuple(target.shape)} vs prediction {tuple(pred.shape)}")
    diff = target - pred
    if target.ndim <= 2:
        num = diff.abs().pow(2).sum().reshape(1)
        den = target.abs().pow(2).sum().reshape(1)
    else:
        num = diff.abs().pow(2).flatten(1).sum(dim=1)
        den = target.abs().pow(2).flatten(1).sum(dim=1)
    return num, den


def _half_normalized_mse(target, pred, normalized):
    num, den = _per_sample_energies(target, pred)
    if normalized:
        if bool((den == 0).any()):
            raise DegenerateInputError("target has zero norm; normalized loss undefined")
        return 0.5 * (num / den).mean()
    return 0.5 * num.mean()


def loss_imse(x_t, x_hat, normalized=True):
    """Image-domain MSE: 0.5 * mean_b ||x_t - x_hat||^2 / ||x_t||^2."""
    return _half_normalized_mse(x_t, x_hat, normalized)


def loss_fmse(y_t, y_hat, normalized=True, mask=None):
    """Frequency-domain MSE on complex spectra; optionally restricted to
    sampled bins by a broadcastable 0/1 mask."""
    if mask is not None:
        y_t = y_t * mask
        y_hat = y_hat * mask
    return _half_normalized_mse(y_t, y_hat, normalized)


class FeatureExtractor(nn.Module):
    """Frozen 4-layer strided conv stack for perceptual distances.

    Default weights are drawn once from a seeded generator and never trained;
    pretrained weights can be loaded from a named-array archive instead.
    """

    CHANNELS = (16, 32, 64, 128)

    def __init__(self, seed=0):
        super().__init__()
        layers = []
        prev = 1
        for c in self.CHANNELS:
            layers.append(nn.Conv2d(prev, c, 3, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2))
            prev = c
        self.stack = nn.Sequential(*layers)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.empty_like(p).normal_(0.0, 0.05, generator=g))
        self.requires_grad_(False)
        self.eval()

    @property
    def total_stride(self):
        return 2 ** len(self.CHANNELS)

    @classmethod
    def from_archive(cls, path):
        from .archive import load_archive
        arrays, _ = load_archive(path)
        ext = cls()
        state = ext.state_dict()
        for name in state:
            if name not in arrays:
                raise FormatError(f"feature extractor archive is missing parameter {name!r}")
            state[name] = torch.from_numpy(arrays[name]).reshape(state[name].shape)
        ext.load_state_dict(state)
        ext.requires_grad_(False)
        return ext

    def forward(self, images):
        """images: (B, H, W) or (B, 1, H, W) magnitudes -> (B, C, H', W') features."""
        if images.ndim == 3:
            images = images[:, None]
        if images.ndim != 4 or images.shape[1] != 1:
            raise ShapeError(f"expected (B, H, W) or (B, 1, H, W), got {tuple(images.shape)}")
        return self.stack(images)


def perceptual_features(x, extractor):
    return extractor(x)


def loss_vgg(x_t, x_hat, extractor, normalized=True):
    """0.5 * normalized squared distance between frozen feature maps
    (normalized by the target features' energy)."""
    f_t = extractor(x_t)
    f_hat = extractor(x_hat)
    return _half_normalized_mse(f_t, f_hat, normalized)


def loss_gen_adv(critic_scores):
    if critic_scores.numel() == 0:
        raise DomainError("empty critic score batch")
    return -critic_scores.mean()


class CriticLossResult(NamedTuple):
    total: torch.Tensor
    wasserstein: torch.Tensor
    gp_term: torch.Tensor


def critic_loss_with_gp(critic, real, fake, lambda_gp=10.0, seed=0):
    """mean f(fake) - mean f(real) + lambda_gp * mean (||grad f(x^)||_2 - 1)^2
    with x^ = eps*real + (1-eps)*fake, eps ~ U(0,1) per sample from `seed`."""
    if real.shape != fake.shape:
        raise ShapeError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} batches differ")
    if lambda_gp < 0:
        raise DomainError(f"lambda_gp must be >= 0, got {lambda_gp}")
    wasserstein = critic(fake).mean() - critic(real).mean()

    g = torch.Generator().manual_seed(int(seed))
    eps_shape = (real.shape[0],) + (1,) * (real.ndim - 1)
    eps = torch.rand(eps_shape, generator=g, dtype=real.dtype)
    interp = (eps * real + (1.0 - eps) * fake).detach().requires_grad_(True)
    scores = critic(interp)
    if scores.requires_grad:
        grads = torch.autograd.grad(scores.sum(), interp, create_graph=True, allow_unused=True)[0]
    else:  # critic is constant in its input; the gradient is exactly zero
        grads = None
    if grads is None:
        grads = torch.zeros_like(interp)
    norms = grads.flatten(1).norm(2, dim=1)
    gp_term = lambda_gp * ((norms - 1.0) ** 2).mean()
    return CriticLossResult(wasserstein + gp_term, wasserstein, gp_term)


def _require_finite(name, value):
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise NumericalError(f"loss term {name!r} is {'NaN' if math.isnan(v) else 'infinite'}")
    return v


def total_loss(weights: LossWeights, imse, fmse, vgg, gen_adv):
    """Weighted sum alpha*imse + beta*fmse + gamma*vgg + gen_adv, with the
    parts retained for logging. Tensor parts keep their autograd graph."""
    weights.validate()
    for name, part in (("imse", imse), ("fmse", fmse), ("vgg", vgg), ("gen_adv", gen_adv)):
        _require_finite(name, part)
    total = weights.alpha * imse + weights.beta * fmse + weights.gamma * vgg + gen_adv
    return LossBreakdown(imse=imse, fmse=fmse, vgg=vgg, gen_adv=gen_adv, total=total)

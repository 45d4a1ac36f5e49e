"""Torch-side complex/Fourier helpers mirroring the numpy conventions.

The model carries complex images as 2-channel (real, imaginary) tensors;
these helpers convert, transform and enforce k-space consistency with the
same centered orthonormal convention as :mod:`dawgan.kspace`.
"""

import torch

from .errors import DomainError


def fft2c(x):
    """Centered orthonormal 2D FFT over the last two dims of a complex tensor."""
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    x = torch.fft.fft2(x, norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c(k):
    k = torch.fft.ifftshift(k, dim=(-2, -1))
    k = torch.fft.ifft2(k, norm="ortho")
    return torch.fft.fftshift(k, dim=(-2, -1))


def channels_to_complex(x):
    """(..., 2, H, W) real -> (..., H, W) complex."""
    return torch.complex(x[..., 0, :, :], x[..., 1, :, :])


def complex_to_channels(z):
    """(..., H, W) complex -> (..., 2, H, W) real."""
    return torch.stack((z.real, z.imag), dim=-3)


def smooth_magnitude(x, eps=1e-12):
    """Magnitude of a 2-channel image, smoothed at zero for differentiability."""
    return torch.sqrt(x[..., 0, :, :] ** 2 + x[..., 1, :, :] ** 2 + eps)


def data_consistency(pred, measured, mask, mode="hard", lam=None):
    """k-space consistency on 2-channel images.

    pred: (..., 2, H, W) real; measured: (..., H, W) complex;
    mask: (..., H, W) broadcastable 0/1. Returns the corrected 2-channel image.
    """
    k = fft2c(channels_to_complex(pred))
    m = mask.to(k.real.dtype)
    if mode == "hard":
        k_out = (1.0 - m) * k + m * measured
    elif mode == "soft":
        if lam is None or lam <= 0:
            raise DomainError("soft data consistency requires lam > 0")
        k_out = (1.0 - m) * k + m * (k + lam * measured) / (1.0 + lam)
    else:
        raise DomainError(f"unknown data-consistency mode {mode!r}")
    return complex_to_channels(ifft2c(k_out))

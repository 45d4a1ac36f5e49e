"""Generator and critic networks.

The generator is an unrolled cascade: each pass runs a per-slice
encoder/decoder with a spatial attention gate after the stem, a
bidirectional convolutional recurrence over the slice axis at the
bottleneck (also carrying state across unrolled passes), a global residual
of the zero-filled input before the output tanh, and an optional k-space
data-consistency correction. Slices travel as 2-channel (real, imag)
images; the critic scores a window of magnitude slices stacked as channels.
"""

import torch
import torch.nn as nn
from dataclasses import dataclass

from .errors import ConfigurationError, ShapeError
from .ops import data_consistency, smooth_magnitude

RECURRENT_ACTIVATIONS = ("relu", "sigmoid")
DC_MODES = ("hard", "soft")


@dataclass
class GeneratorConfig:
    base_channels: int = 32
    depth: int = 3
    n_unrolled_iterations: int = 3
    window_T: int = 3
    use_attention: bool = True
    use_recurrence: bool = True
    use_dc: bool = True
    tie_directional_weights: bool = True
    recurrent_activation: str = "relu"
    dc_mode: str = "hard"
    dc_lambda: float = 10.0

    def validate(self):
        if self.base_channels < 1 or self.depth < 1 or self.n_unrolled_iterations < 1:
            raise ConfigurationError("base_channels, depth and n_unrolled_iterations must be >= 1")
        if self.window_T < 1 or self.window_T % 2 == 0:
            raise ConfigurationError(f"window_T must be odd and >= 1, got {self.window_T}")
        if self.recurrent_activation not in RECURRENT_ACTIVATIONS:
            raise ConfigurationError(f"recurrent_activation must be one of {RECURRENT_ACTIVATIONS}")
        if self.dc_mode not in DC_MODES:
            raise ConfigurationError(f"dc_mode must be one of {DC_MODES}")
        if self.dc_mode == "soft" and self.dc_lambda <= 0:
            raise ConfigurationError("soft data consistency requires dc_lambda > 0")
        return self


@dataclass
class CriticConfig:
    channels: tuple = (32, 64, 128)
    normalization: str = "none"   # none | instance

    def validate(self):
        if not self.channels:
            raise ConfigurationError("critic needs at least one conv level")
        if self.normalization not in ("none", "instance"):
            raise ConfigurationError(f"normalization must be 'none' or 'instance', got {self.normalization!r}")
        return self


class SpatialAttention(nn.Module):
    """Sigmoid gate from channel-pooled features: sigma(conv7x7([mean; max]))."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, features):
        avg = features.mean(dim=1, keepdim=True)
        mx = features.max(dim=1, keepdim=True).values
        attn = torch.sigmoid(self.conv(torch.cat([avg, mx], dim=1)))
        return features * attn, attn


class BidirectionalConvRecurrent(nn.Module):
    """Gateless bidirectional convolutional recurrence over the slice axis.

    Each direction computes act(W_l * input_t + W_t * state_neighbor +
    W_i * prev_pass_t + bias) and the outputs of the two sweeps are summed.
    With tied weights the directions share W_l, W_t, W_i and differ only in
    their bias.
    """

    def __init__(self, channels, kernel_size=3, tied=True, activation="relu"):
        super().__init__()
        self.tied = tied
        pad = kernel_size // 2

        def conv():
            return nn.Conv2d(channels, channels, kernel_size, padding=pad, bias=False)

        self.conv_input = conv()
        self.conv_state = conv()
        self.conv_iter = conv()
        if not tied:
            self.conv_input_bwd = conv()
            self.conv_state_bwd = conv()
            self.conv_iter_bwd = conv()
        self.bias_fwd = nn.Parameter(torch.zeros(channels))
        self.bias_bwd = nn.Parameter(torch.zeros(channels))
        self.act = torch.relu if activation == "relu" else torch.sigmoid

    def _sweep(self, x, prev_iter, reverse):
        B, T = x.shape[0], x.shape[1]
        if reverse and not self.tied:
            conv_in, conv_st, conv_it = self.conv_input_bwd, self.conv_state_bwd, self.conv_iter_bwd
        else:
            conv_in, conv_st, conv_it = self.conv_input, self.conv_state, self.conv_iter
        bias = (self.bias_bwd if reverse else self.bias_fwd).view(1, -1, 1, 1)
        order = range(T - 1, -1, -1) if reverse else range(T)
        state = torch.zeros_like(x[:, 0])
        out = [None] * T
        for t in order:
            state = self.act(conv_in(x[:, t]) + conv_st(state) + conv_it(prev_iter[:, t]) + bias)
            out[t] = state
        return torch.stack(out, dim=1)

    def forward(self, x, prev_iter=None):
        """x: (B, T, C, H, W); prev_iter: same shape from the previous unrolled pass."""
        if prev_iter is None:
            prev_iter = torch.zeros_like(x)
        if prev_iter.shape != x.shape:
            raise ShapeError(f"prev_iter shape {tuple(prev_iter.shape)} != input shape {tuple(x.shape)}")
        return self._sweep(x, prev_iter, reverse=False) + self._sweep(x, prev_iter, reverse=True)


def _conv_block(c_in, c_out, stride=1):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        nn.LeakyReLU(0.2),
    )


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        C = cfg.base_channels

        self.stem = _conv_block(2, C)
        self.sab = SpatialAttention() if cfg.use_attention else None

        downs = []
        for k in range(cfg.depth):
            downs.append(_conv_block(C * 2 ** k, C * 2 ** (k + 1), stride=2))
        self.downs = nn.ModuleList(downs)

        bottleneck_c = C * 2 ** cfg.depth
        if cfg.use_recurrence:
            self.recurrent = BidirectionalConvRecurrent(
                bottleneck_c,
                tied=cfg.tie_directional_weights,
                activation=cfg.recurrent_activation,
            )
            self.bottleneck = None
        else:
            self.recurrent = None
            self.bottleneck = _conv_block(bottleneck_c, bottleneck_c)

        ups, fuses = [], []
        for k in range(cfg.depth, 0, -1):
            c_hi, c_lo = C * 2 ** k, C * 2 ** (k - 1)
            ups.append(nn.Sequential(nn.ConvTranspose2d(c_hi, c_lo, 4, stride=2, padding=1),
                                     nn.LeakyReLU(0.2)))
            fuses.append(_conv_block(2 * c_lo, c_lo))
        self.ups = nn.ModuleList(ups)
        self.fuses = nn.ModuleList(fuses)
        self.head = nn.Conv2d(C, 2, 3, padding=1)

    def _check_inputs(self, zero_filled, measured, mask):
        if zero_filled.ndim != 5 or zero_filled.shape[2] != 2:
            raise ConfigurationError(
                f"zero_filled must be (B, T, 2, H, W), got {tuple(zero_filled.shape)}")
        B, T, _, H, W = zero_filled.shape
        if T != self.cfg.window_T:
            raise ConfigurationError(f"window length {T} != configured window_T {self.cfg.window_T}")
        if self.cfg.use_dc:
            if measured is None or mask is None:
                raise ConfigurationError("data consistency is enabled but measured/mask is missing")
            if tuple(measured.shape) != (B, T, H, W):
                raise ConfigurationError(
                    f"measured must be (B, T, H, W)={B, T, H, W}, got {tuple(measured.shape)}")

    def forward(self, zero_filled, measured=None, mask=None):
        """zero_filled: (B, T, 2, H, W); measured: (B, T, H, W) complex;
        mask: (B, H, W) or (B, T, H, W). Returns the final 2-channel window."""
        self._check_inputs(zero_filled, measured, mask)
        cfg = self.cfg
        B, T, _, H, W = zero_filled.shape
        if mask is not None and mask.ndim == 3:
            mask = mask[:, None, :, :]

        x = zero_filled
        iter_state = None
        for _ in range(cfg.n_unrolled_iterations):
            h = x.reshape(B * T, 2, H, W)
            h = self.stem(h)
            if self.sab is not None:
                h, _ = self.sab(h)
            skips = [h]
            for k, down in enumerate(self.downs):
                h = down(h)
                if k < cfg.depth - 1:
                    skips.append(h)

            if self.recurrent is not None:
                hb = h.reshape(B, T, *h.shape[1:])
                hb = self.recurrent(hb, iter_state)
                iter_state = hb
                h = hb.reshape(B * T, *hb.shape[2:])
            else:
                h = self.bottleneck(h)

            for up, fuse, skip in zip(self.ups, self.fuses, reversed(skips)):
                h = up(h)
                h = h[..., :skip.shape[-2], :skip.shape[-1]]
                h = fuse(torch.cat([h, skip], dim=1))

            dec = self.head(h).reshape(B, T, 2, H, W)
            x = torch.tanh(dec + zero_filled)
            if cfg.use_dc:
                x = data_consistency(x, measured, mask, mode=cfg.dc_mode, lam=cfg.dc_lambda)
        return x

    def reconstruct(self, zero_filled, measured=None, mask=None):
        """Forward pass returning (magnitude window, 2-channel window)."""
        out = self.forward(zero_filled, measured, mask)
        return smooth_magnitude(out), out


class Critic(nn.Module):
    """Strided conv stack over a slice window stacked as channels; scalar score,
    no output nonlinearity."""

    def __init__(self, cfg: CriticConfig, in_channels):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        layers = []
        prev = in_channels
        for c in cfg.channels:
            layers.append(nn.Conv2d(prev, c, 4, stride=2, padding=1))
            if cfg.normalization == "instance":
                layers.append(nn.InstanceNorm2d(c, affine=True))
            layers.append(nn.LeakyReLU(0.2))
            prev = c
        self.features = nn.Sequential(*layers)
        self.score = nn.Linear(prev, 1)

    def forward(self, window):
        if window.ndim != 4:
            raise ShapeError(f"critic expects (B, T, H, W), got {tuple(window.shape)}")
        h = self.features(window)
        h = h.mean(dim=(-2, -1))
        return self.score(h).squeeze(-1)

"""Fourier encoding, undersampling, noise injection and data consistency.

Conventions used throughout the workbench:

* k-space is the centered spectrum: the DC bin sits at ``(H//2, W//2)``.
* Both transform directions are orthonormal (``1/sqrt(H*W)`` each way), so
  Parseval holds exactly and Gaussian noise keeps its standard deviation
  across the transform.
* Images are real arrays with intensities normalized to ``[-1, 1]``;
  reconstructions are reported as magnitude images in ``[0, 1]``.
"""

import numpy as np
from dataclasses import dataclass

from .errors import DegenerateInputError, DomainError, FormatError, ShapeError
from .fileio import read_sidecar, require_field, write_bytes_atomic, write_sidecar

MASK_KINDS = ("cartesian-1d-gaussian", "uniform-2d")

_MASK_ALIASES = {
    "cartesian": "cartesian-1d-gaussian",
    "cartesian-1d-gaussian": "cartesian-1d-gaussian",
    "uniform": "uniform-2d",
    "uniform-2d": "uniform-2d",
}


def _as_2d(a, name):
    a = np.asarray(a)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a 2D array, got shape {a.shape}")
    return a


def forward_fft2c(image):
    """Centered orthonormal 2D DFT of an image (real or complex)."""
    x = _as_2d(image, "image")
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x), norm="ortho"))


def inverse_fft2c(kspace):
    """Exact inverse of :func:`forward_fft2c` (same centering and scaling)."""
    k = _as_2d(kspace, "kspace")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k), norm="ortho"))


@dataclass
class SamplingMask:
    """Binary k-space retention pattern plus the parameters that produced it."""

    data: np.ndarray
    ratio: float
    kind: str
    center_fraction: float
    seed: int

    @property
    def shape(self):
        return self.data.shape


def resolve_mask_kind(kind: str) -> str:
    k = _MASK_ALIASES.get(str(kind).lower())
    if k is None:
        raise DomainError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    return k


def _center_order(n):
    """Indices 0..n-1 sorted by distance from the centered DC index (n//2)."""
    idx = np.arange(n)
    dist = np.abs(idx - n // 2)
    return idx[np.lexsort((idx, dist))]


def make_mask(shape, ratio, kind="cartesian-1d-gaussian", center_fraction=0.04, seed=0):
    """Draw a deterministic sampling mask with the exact requested retention count.

    ``cartesian-1d-gaussian`` retains whole columns: a fully sampled band of
    ``round(center_fraction * W)`` lowest-frequency columns plus outer columns
    drawn without replacement with probability proportional to
    ``exp(-d^2 / (2 * (W/6)^2))``, ``d`` the distance from the center column.
    ``uniform-2d`` retains the ``round(center_fraction * H * W)`` lowest
    frequency bins and draws the rest uniformly.
    """
    H, W = int(shape[0]), int(shape[1])
    if not (0.0 < ratio <= 1.0):
        raise DomainError(f"ratio must be in (0, 1], got {ratio}")
    if not (0.0 <= center_fraction < 0.5):
        raise DomainError(f"center_fraction must be in [0, 0.5), got {center_fraction}")
    if center_fraction > ratio:
        raise DomainError(f"center_fraction {center_fraction} exceeds ratio {ratio}")
    kind = resolve_mask_kind(kind)
    rng = np.random.default_rng(seed)
    mask = np.zeros((H, W), dtype=np.uint8)

    if kind == "cartesian-1d-gaussian":
        n_keep = int(np.rint(ratio * W))
        n_center = int(np.rint(center_fraction * W))
        order = _center_order(W)
        center_cols = order[:n_center]
        outer = np.sort(order[n_center:])
        n_rand = n_keep - n_center
        if n_rand > 0:
            sigma = W / 6.0
            d = np.abs(outer - W // 2).astype(float)
            w = np.exp(-(d**2) / (2.0 * sigma**2))
            chosen = rng.choice(outer, size=n_rand, replace=False, p=w / w.sum())
        else:
            chosen = np.empty(0, dtype=int)
        mask[:, center_cols] = 1
        mask[:, chosen] = 1
    else:
        n_keep = int(np.rint(ratio * H * W))
        n_center = int(np.rint(center_fraction * H * W))
        ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        d2 = (ii - H // 2) ** 2 + (jj - W // 2) ** 2
        flat = np.arange(H * W)
        order = flat[np.lexsort((flat, d2.ravel()))]
        center_bins = order[:n_center]
        outer = order[n_center:]
        n_rand = n_keep - n_center
        chosen = rng.choice(outer, size=n_rand, replace=False) if n_rand > 0 else []
        m = mask.ravel()
        m[center_bins] = 1
        m[chosen] = 1

    return SamplingMask(data=mask, ratio=float(ratio), kind=kind,
                        center_fraction=float(center_fraction), seed=int(seed))


def _mask_array(mask):
    data = mask.data if isinstance(mask, SamplingMask) else np.asarray(mask)
    return _as_2d(data, "mask")


def apply_undersampling(kspace, mask):
    """Elementwise retention: zeros wherever the mask is 0."""
    k = _as_2d(kspace, "kspace")
    m = _mask_array(mask)
    if k.shape != m.shape:
        raise ShapeError(f"kspace shape {k.shape} != mask shape {m.shape}")
    return k * m.astype(k.real.dtype)


def add_kspace_noise(kspace, sigma, seed=0):
    """Add white complex Gaussian noise calibrated in image-domain units.

    With the orthonormal transform pair, i.i.d. complex noise whose real and
    imaginary parts each have standard deviation ``sigma`` in k-space maps to
    image-domain noise with per-pixel real-part standard deviation ``sigma``.
    """
    k = _as_2d(kspace, "kspace")
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    k = np.asarray(k, dtype=np.complex128)
    if sigma == 0:
        return k.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape)
    return k + sigma * noise


def zero_fill_recon(undersampled):
    """Magnitude of the inverse transform, clipped to the unit range."""
    img = inverse_fft2c(undersampled)
    return np.clip(np.abs(img), 0.0, 1.0)


def data_consistency(predicted, measured, mask, mode="hard", lam=None):
    """Replace (or blend) the predicted spectrum with measured data at sampled bins.

    ``hard`` substitutes the measured values exactly; ``soft`` takes the
    convex blend ``(F x + lam * y) / (1 + lam)`` at sampled bins. The result
    is a complex image of the predicted shape (a real prediction is treated
    as a complex image with zero imaginary part, and the measured spectrum
    generally reintroduces phase).
    """
    x = np.asarray(predicted)
    y = _as_2d(measured, "measured")
    m = _mask_array(mask)
    if x.shape != y.shape or y.shape != m.shape:
        raise ShapeError(f"shape mismatch: predicted {x.shape}, measured {y.shape}, mask {m.shape}")
    k = forward_fft2c(x)
    m = m.astype(float)
    if mode == "hard":
        k_out = (1.0 - m) * k + m * y
    elif mode == "soft":
        if lam is None or lam <= 0:
            raise DomainError("soft data consistency requires lam > 0")
        k_out = (1.0 - m) * k + m * (k + lam * y) / (1.0 + lam)
    else:
        raise DomainError(f"unknown data-consistency mode {mode!r}")
    return inverse_fft2c(k_out)


def normalize_intensity(volume):
    """Affine map sending the array's (min, max) onto (-1, 1)."""
    v = np.asarray(volume, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise DomainError("volume contains non-finite values")
    if hi == lo:
        raise DegenerateInputError("cannot normalize a constant volume")
    return 2.0 * (v - lo) / (hi - lo) - 1.0


# -- mask / k-space persistence ---------------------------------------------

def save_mask(mask: SamplingMask, path):
    write_bytes_atomic(path, np.ascontiguousarray(mask.data, dtype=np.uint8).tobytes())
    write_sidecar(path, {
        "shape": f"{mask.shape[0]}x{mask.shape[1]}",
        "ratio": repr(mask.ratio),
        "kind": mask.kind,
        "center_fraction": repr(mask.center_fraction),
        "seed": mask.seed,
    })


def _parse_shape(fields, path):
    shape = require_field(fields, "shape", path)
    try:
        H, W = (int(s) for s in shape.split("x"))
    except ValueError:
        raise FormatError(f"sidecar for {path}: field 'shape' must look like HxW, got {shape!r}")
    return H, W


def load_mask(path) -> SamplingMask:
    fields = read_sidecar(path)
    H, W = _parse_shape(fields, path)
    payload = np.fromfile(path, dtype=np.uint8)
    if payload.size != H * W:
        raise FormatError(f"mask payload for {path}: expected {H * W} bytes, got {payload.size}")
    data = payload.reshape(H, W)
    if not np.isin(data, (0, 1)).all():
        raise FormatError(f"mask payload for {path}: entries must be 0 or 1")
    return SamplingMask(
        data=data,
        ratio=float(require_field(fields, "ratio", path)),
        kind=resolve_mask_kind(require_field(fields, "kind", path)),
        center_fraction=float(fields.get("center_fraction", 0.0)),
        seed=int(require_field(fields, "seed", path)),
    )


def save_kspace(kspace, path, extra_fields=None):
    """Interleaved little-endian float32 (re, im), row-major, plus sidecar."""
    k = _as_2d(kspace, "kspace").astype(np.complex128)
    H, W = k.shape
    inter = np.empty((H, W, 2), dtype="<f4")
    inter[..., 0] = k.real
    inter[..., 1] = k.imag
    write_bytes_atomic(path, inter.tobytes())
    fields = {"shape": f"{H}x{W}", "dtype": "float32-le-interleaved-reim"}
    if extra_fields:
        fields.update(extra_fields)
    write_sidecar(path, fields)


def load_kspace(path):
    fields = read_sidecar(path)
    H, W = _parse_shape(fields, path)
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != H * W * 2:
        raise FormatError(f"k-space payload for {path}: expected {H * W * 2} float32 values, got {payload.size}")
    inter = payload.reshape(H, W, 2).astype(np.float64)
    return inter[..., 0] + 1j * inter[..., 1]

"""Synthetic multi-slice phantoms, slice windows, splits and augmentation.

Volumes are stacks of soft-edged ellipse phantoms whose geometry drifts
smoothly along the slice axis, so neighbouring slices stay strongly
correlated (the property the recurrent reconstruction exploits) while still
differing. Everything is deterministic in its seed.
"""

import numpy as np
import scipy.special
from dataclasses import dataclass
from scipy.ndimage import gaussian_filter

from .errors import DomainError, FormatError
from .fileio import read_sidecar, require_field, write_bytes_atomic, write_sidecar
from .kspace import normalize_intensity


@dataclass
class SliceSequence:
    """A window of T adjacent slices; the model's unit of work."""

    window: np.ndarray          # (T, H, W)
    volume_id: int
    center_index: int


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    fractions: tuple
    seed: int


@dataclass
class AugmentParams:
    hflip: bool
    vflip: bool
    dx: int
    dy: int

    def is_identity(self):
        return not self.hflip and not self.vflip and self.dx == 0 and self.dy == 0


def _soft_ellipse(X, Y, cx, cy, a, b, theta, edge=0.04):
    """Ellipse indicator with a sigmoid edge; 1 deep inside, 0 outside."""
    ct, st = np.cos(theta), np.sin(theta)
    u = (X - cx) * ct + (Y - cy) * st
    v = -(X - cx) * st + (Y - cy) * ct
    q = (u / a) ** 2 + (v / b) ** 2
    return scipy.special.expit(-(q - 1.0) / edge)


def generate_phantom_volume(n_slices, size, seed=0):
    """Stack of ellipse-phantom slices with smooth through-slice drift.

    The ellipse set mimics the classic head phantom: a bright rim, a large
    mid-gray interior, a pair of dark ventricle-like lobes and a few small
    bright spots. Centers, axes and intensities follow low-order polynomials
    in the normalized slice coordinate, drawn per volume from ``seed``.
    Output is normalized to [-1, 1].
    """
    if n_slices < 3:
        raise DomainError(f"n_slices must be >= 3, got {n_slices}")
    if size < 32:
        raise DomainError(f"size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)

    # base geometry: (cx, cy, a, b, theta, value)
    base = [
        (0.0, 0.0, 0.72, 0.92, 0.0, 1.0),                     # rim
        (0.0, 0.02, 0.64, 0.83, 0.0, -0.55),                  # interior
        (0.20, 0.0, 0.11, 0.30, -0.3, -0.35),                 # right lobe
        (-0.20, 0.0, 0.14, 0.35, 0.3, -0.35),                 # left lobe
        (0.0, -0.42, 0.16, 0.14, 0.0, 0.45),                  # lower mass
        (0.05, 0.35, 0.05, 0.05, 0.0, 0.75),                  # bright spot
        (-0.08, 0.48, 0.035, 0.05, 0.0, 0.85),                # bright spot
        (0.0, 0.12, 0.045, 0.035, 0.0, 0.65),                 # bright spot
    ]
    jitter = rng.uniform(-0.04, 0.04, size=(len(base), 5))
    drift1 = rng.uniform(-0.05, 0.05, size=(len(base), 5))
    drift2 = rng.uniform(-0.04, 0.04, size=(len(base), 5))
    vdrift = rng.uniform(-0.08, 0.08, size=(len(base), 2))

    coords = np.linspace(-1.0, 1.0, size)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    z_grid = np.linspace(-1.0, 1.0, n_slices)

    slices = np.zeros((n_slices, size, size))
    for t, z in enumerate(z_grid):
        img = np.zeros((size, size))
        shrink = np.sqrt(max(0.25, 1.0 - 0.18 * z * z))
        for e, (cx, cy, a, b, th, val) in enumerate(base):
            d = jitter[e] + drift1[e] * z + drift2[e] * z * z
            v = val + vdrift[e, 0] * z + vdrift[e, 1] * z * z
            a_t = max(0.02, (a + d[2]) * shrink)
            b_t = max(0.02, (b + d[3]) * shrink)
            img += v * _soft_ellipse(X, Y, cx + d[0], cy + d[1], a_t, b_t, th + d[4])
        slices[t] = gaussian_filter(img, sigma=0.8)

    return normalize_intensity(slices)


def adjacent_slice_correlation(volume):
    """Mean Pearson correlation between consecutive slices."""
    v = np.asarray(volume)
    corrs = []
    for t in range(v.shape[0] - 1):
        a = v[t].ravel()
        b = v[t + 1].ravel()
        corrs.append(np.corrcoef(a, b)[0, 1])
    return float(np.mean(corrs))


def reflect_index(i, n):
    """Mirror an index into [0, n) without repeating the edge sample."""
    if n == 1:
        return 0
    period = 2 * n - 2
    i = abs(i) % period
    return period - i if i >= n else i


def extract_sequences(volume, T, stride=1, volume_id=0):
    """Sliding windows of T slices centered at 0, stride, 2*stride, ...

    Out-of-range window indices are reflected, so every slice can serve as a
    center slice.
    """
    v = np.asarray(volume)
    L = v.shape[0]
    if T % 2 == 0 or T < 1:
        raise DomainError(f"window length T must be odd and >= 1, got {T}")
    if T > L:
        raise DomainError(f"window length T={T} exceeds volume length L={L}")
    half = T // 2
    seqs = []
    for center in range(0, L, stride):
        idx = [reflect_index(center + o, L) for o in range(-half, half + 1)]
        seqs.append(SliceSequence(window=v[idx].copy(), volume_id=volume_id, center_index=center))
    return seqs


def split_dataset(volume_ids, fractions, seed=0):
    """Volume-level split; val/test sizes are rounded, train absorbs the rest."""
    ids = list(volume_ids)
    if not ids:
        raise DomainError("cannot split an empty id list")
    f_train, f_val, f_test = fractions
    total = f_train + f_val + f_test
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"fractions must sum to 1, got {total}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_val = int(np.rint(f_val * n))
    n_test = int(np.rint(f_test * n))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise DomainError("rounded val/test sizes exceed the dataset")
    return DatasetSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        fractions=tuple(fractions),
        seed=int(seed),
    )


def draw_augmentation(seed):
    rng = np.random.default_rng(seed)
    return AugmentParams(
        hflip=bool(rng.random() < 0.5),
        vflip=bool(rng.random() < 0.5),
        dx=int(rng.integers(-4, 5)),
        dy=int(rng.integers(-4, 5)),
    )


def apply_augmentation(window, params: AugmentParams):
    """Apply one transform to every slice: flips then an integer shift with
    edge reflection. No interpolation, so the value set is preserved."""
    w = np.asarray(window)
    out = w
    if params.hflip:
        out = out[..., ::-1]
    if params.vflip:
        out = out[..., ::-1, :]
    if params.dx or params.dy:
        H, W = out.shape[-2], out.shape[-1]
        rows = np.array([reflect_index(i - params.dy, H) for i in range(H)])
        cols = np.array([reflect_index(j - params.dx, W) for j in range(W)])
        out = out[..., rows[:, None], cols[None, :]]
    return np.ascontiguousarray(out)


def augment(seq: SliceSequence, seed=0) -> SliceSequence:
    params = draw_augmentation(seed)
    return SliceSequence(
        window=apply_augmentation(seq.window, params),
        volume_id=seq.volume_id,
        center_index=seq.center_index,
    )


# -- volume persistence -------------------------------------------------------

def save_volume(volume, path, seed=-1):
    v = np.ascontiguousarray(volume, dtype="<f4")
    if v.ndim != 3:
        raise DomainError(f"volume must be 3D (L, H, W), got shape {v.shape}")
    write_bytes_atomic(path, v.tobytes())
    write_sidecar(path, {
        "dims": "x".join(str(d) for d in v.shape),
        "dtype": "float32-le",
        "normalization": "[-1,1]",
        "seed": seed,
    })


def load_volume(path):
    fields = read_sidecar(path)
    dims = require_field(fields, "dims", path)
    try:
        L, H, W = (int(s) for s in dims.split("x"))
    except ValueError:
        raise FormatError(f"sidecar for {path}: field 'dims' must look like LxHxW, got {dims!r}")
    if require_field(fields, "dtype", path) != "float32-le":
        raise FormatError(f"sidecar for {path}: unsupported dtype {fields['dtype']!r}")
    payload = np.fromfile(path, dtype="<f4")
    if payload.size != L * H * W:
        raise FormatError(
            f"volume payload for {path}: dims {dims} imply {L * H * W} values, got {payload.size}")
    return payload.reshape(L, H, W).astype(np.float64)

"""Metric suite, single-image noise estimation, and the comparison /
noise-sweep harnesses.

Metric inputs follow the signed [-1, 1] convention and are mapped to [0, 1]
internally where a dynamic range is needed (PSNR peak 1, SSIM data range 1).
The harnesses score magnitude images: every test slice is reconstructed as
the center of its window, the reference is the magnitude of the ground-truth
slice, and both sides are rounded to the float32 precision of the on-disk
volume format before comparison, so a lossless path (e.g. a full mask) scores
as exactly identical. Magnitudes live in [0, 1] and are lifted with 2x-1
where a metric expects the signed convention.
"""

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
import torch
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import gamma as gamma_dist

from .baselines import reconstruct_admm_tv
from .errors import (ConfigurationError, DegenerateInputError, DomainError,
                     InsufficientTextureError, ShapeError)
from .fileio import write_bytes_atomic
from .kspace import add_kspace_noise, forward_fft2c, inverse_fft2c, make_mask, zero_fill_recon
from .phantom import reflect_index

BASELINE_METHODS = ("zero-fill", "admm-tv")
COMPARISON_COLUMNS = ("method", "ratio", "metric", "mean", "std", "n")
SWEEP_COLUMNS = ("method", "ratio", "sigma", "psnr_mean", "psnr_std", "residual_sigma_mean")


def _check_pair(reference, test):
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"reference shape {a.shape} != test shape {b.shape}")
    return a, b


def psnr(reference, test):
    """Peak SNR in dB with peak 1 after mapping [-1, 1] -> [0, 1]; returns
    inf for identical inputs."""
    a, b = _check_pair(reference, test)
    mse = float(np.mean((0.5 * (a - b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(reference, test, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean local SSIM with a Gaussian window (data range 1 after mapping)."""
    a, b = _check_pair(reference, test)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2D images, got shape {a.shape}")
    if min(a.shape) < window_size:
        raise DomainError(f"image {a.shape} is smaller than the {window_size}x{window_size} window")
    a = 0.5 * (a + 1.0)
    b = 0.5 * (b + 1.0)
    kernel = _gaussian_window(window_size, sigma)

    def filt(x):
        w = sliding_window_view(x, (window_size, window_size))
        return np.tensordot(w, kernel, axes=([2, 3], [0, 1]))

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = k1 ** 2, k2 ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def nmse(reference, test):
    a, b = _check_pair(reference, test)
    den = float(np.sum(a ** 2))
    if den == 0.0:
        raise DegenerateInputError("reference has zero energy; NMSE undefined")
    return float(np.sum((a - b) ** 2) / den)


# -- single-image noise estimation ---------------------------------------------


def _derivative_operator_threshold(patch_size, conf):
    """Statistical factor for the weak-texture gradient test: gradient energy
    of a pure-noise patch is ~ sigma^2 * Gamma(r/2, 2 tr(DD)/r)."""
    k = np.array([-0.5, 0.0, 0.5])
    rows_h, rows_v = [], []
    for i in range(patch_size):
        for j in range(patch_size - 2):
            row = np.zeros(patch_size * patch_size)
            for m, km in enumerate(k):
                row[i * patch_size + j + m] = km
            rows_h.append(row)
            col = np.zeros(patch_size * patch_size)
            for m, km in enumerate(k):
                col[(j + m) * patch_size + i] = km
            rows_v.append(col)
    dh = np.array(rows_h)
    dv = np.array(rows_v)
    dd = dh.T @ dh + dv.T @ dv
    r = float(np.linalg.matrix_rank(dd))
    tr = float(np.trace(dd))
    return float(gamma_dist.ppf(conf, a=r / 2.0, scale=2.0 * tr / r)), tr


def estimate_noise_level(image, patch_size=7, conf=1 - 1e-6, max_rounds=10, min_patches=50):
    """Weak-texture patch PCA estimate of the noise standard deviation.

    Iteratively keeps patches whose gradient energy is below the level
    expected of pure noise at the current estimate, and reads sigma^2 off the
    smallest eigenvalue of the kept patches' covariance.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2D image, got shape {img.shape}")
    if min(img.shape) < 32:
        raise DomainError(f"image {img.shape} is too small; need at least 32x32")

    patches = sliding_window_view(img, (patch_size, patch_size))
    n_rows, n_cols = patches.shape[:2]
    X = patches.reshape(n_rows * n_cols, patch_size * patch_size)
    if X.shape[0] < min_patches:
        raise InsufficientTextureError(f"only {X.shape[0]} patches available, need {min_patches}")

    kh = np.array([[-0.5, 0.0, 0.5]])
    gh = scipy.ndimage.correlate(img, kh, mode="nearest")[:, 1:-1] ** 2
    gv = scipy.ndimage.correlate(img, kh.T, mode="nearest")[1:-1, :] ** 2
    eh = sliding_window_view(gh, (patch_size, patch_size - 2)).sum(axis=(2, 3))
    ev = sliding_window_view(gv, (patch_size - 2, patch_size)).sum(axis=(2, 3))
    energy = (eh + ev).reshape(-1)

    tau0, dd_trace = _derivative_operator_threshold(patch_size, conf)

    def smallest_cov_eigenvalue(subset):
        cov = subset.T @ subset / (subset.shape[0] - 1)
        return float(np.linalg.eigvalsh(cov)[0])

    # Seed the iteration from above: attribute the median patch gradient energy
    # to noise (E[energy] = sigma^2 tr(DD) for pure noise). Starting from the
    # smallest covariance eigenvalue instead collapses the threshold on
    # structured images, where that eigenvalue sits far below the noise floor.
    sig2 = float(np.median(energy)) / dd_trace
    selected = None
    for _ in range(max_rounds):
        tau = sig2 * tau0
        keep = energy < tau
        n_keep = int(keep.sum())
        if n_keep < min_patches:
            raise InsufficientTextureError(
                f"only {n_keep} weak-texture patches below threshold, need {min_patches}")
        if selected is not None and bool(np.array_equal(keep, selected)):
            break
        selected = keep
        new_sig2 = max(smallest_cov_eigenvalue(X[keep]), 0.0)
        done = new_sig2 <= 1e-30 or abs(new_sig2 - sig2) <= 1e-3 * sig2
        sig2 = new_sig2
        if done:
            break
    return math.sqrt(sig2)


# -- harnesses -------------------------------------------------------------------


@dataclass
class MetricsReport:
    rows: dict            # (method, ratio, metric) -> (mean, std, n)
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for (method, ratio, metric) in sorted(self.rows):
            mean, std, n = self.rows[(method, ratio, metric)]
            writer.writerow([method, repr(float(ratio)), metric, repr(float(mean)),
                             repr(float(std)), n])
        write_bytes_atomic(path, buf.getvalue().encode("utf-8"))


@dataclass
class NoiseSweep:
    sigma_grid: tuple
    rows: dict            # (method, ratio, sigma) -> {psnr_mean, psnr_std, residual_sigma_mean}
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for (method, ratio, sigma) in sorted(self.rows):
            cell = self.rows[(method, ratio, sigma)]
            writer.writerow([method, repr(float(ratio)), repr(float(sigma)),
                             repr(cell["psnr_mean"]), repr(cell["psnr_std"]),
                             repr(cell["residual_sigma_mean"])])
        write_bytes_atomic(path, buf.getvalue().encode("utf-8"))


def _window_at(volume, center, T):
    L = volume.shape[0]
    half = T // 2
    idx = [reflect_index(center + o, L) for o in range(-half, half + 1)]
    return volume[idx]


def _derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _resolve_checkpoints(methods, checkpoints):
    from .training import Checkpoint, load_checkpoint
    generators = {}
    for method in methods:
        if method in BASELINE_METHODS:
            continue
        if not checkpoints or method not in checkpoints:
            raise ConfigurationError(f"method {method!r} needs a trained checkpoint")
        ckpt = checkpoints[method]
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(os.fspath(ckpt))
        gen = ckpt.generator
        gen.eval()
        generators[method] = gen
    return generators


def _network_recon(gen, measured, mask_arr, center):
    """measured: (T, H, W) complex ndarray; returns center-slice magnitude in [0, 1]."""
    zf = np.stack([inverse_fft2c(measured[t]) for t in range(measured.shape[0])])
    zero_filled = torch.from_numpy(
        np.stack([zf.real, zf.imag], axis=1).astype(np.float32))[None]
    meas_t = torch.from_numpy(measured.astype(np.complex64))[None]
    mask_t = torch.from_numpy(mask_arr.astype(np.float32))[None]
    with torch.no_grad():
        mag, _out = gen.reconstruct(zero_filled, meas_t, mask_t)
    return np.clip(mag[0, center].numpy().astype(np.float64), 0.0, 1.0)


def _storage_round(image):
    """Round to the float32 precision volumes are stored at; differences below
    one float32 ulp (e.g. FFT round-trip error under a full mask) vanish."""
    return np.asarray(image, dtype=np.float32).astype(np.float64)


def _run_protocol(methods, volumes, test_ids, ratios, sigmas, seed, generators,
                  window_T, mask_kind, center_fraction, admm_cfg, with_residual):
    """Shared reconstruction loop scoring magnitude images. Returns
    {(method, ratio, sigma): {"psnr": [...], "ssim": [...], "nmse": [...], "residual": [...]}}.

    Mask and noise seeds depend only on (seed, volume, center, ratio), never on
    sigma or method, so sweep columns line up with the comparison run."""
    cells = {(m, r, s): {"psnr": [], "ssim": [], "nmse": [], "residual": []}
             for m in methods for r in ratios for s in sigmas}
    half = window_T // 2
    for vid in test_ids:
        volume = np.asarray(volumes[vid], dtype=np.float64)
        L, H, W = volume.shape
        for center in range(L):
            window = _window_at(volume, center, window_T)
            ref_mag = _storage_round(np.abs(window[half]))
            ref_pm = 2.0 * ref_mag - 1.0
            y_full = np.stack([forward_fft2c(window[t]) for t in range(window_T)])
            for ratio in ratios:
                mask_seed = _derive_seed(seed, vid, center, round(ratio * 1e6))
                noise_seed = _derive_seed(seed, vid, center, round(ratio * 1e6), 7)
                mask = make_mask((H, W), ratio, mask_kind, center_fraction, seed=mask_seed)
                m = mask.data.astype(np.float64)
                for s in sigmas:
                    measured = np.stack([
                        add_kspace_noise(y_full[t], s, seed=noise_seed + t) * m
                        for t in range(window_T)])
                    for method in methods:
                        if method == "zero-fill":
                            recon = zero_fill_recon(measured[half])
                        elif method == "admm-tv":
                            recon = reconstruct_admm_tv(measured[half], m, admm_cfg)
                        else:
                            recon = _network_recon(generators[method], measured, m, half)
                        recon = _storage_round(recon)
                        cell = cells[(method, ratio, s)]
                        test_pm = 2.0 * recon - 1.0
                        cell["psnr"].append(psnr(ref_pm, test_pm))
                        cell["ssim"].append(ssim(ref_pm, test_pm))
                        cell["nmse"].append(nmse(ref_mag, recon))
                        if with_residual:
                            try:
                                cell["residual"].append(estimate_noise_level(recon))
                            except InsufficientTextureError:
                                # residual noise below the estimator's detection
                                # floor (or no weak-texture support); record as
                                # missing rather than abort the sweep
                                cell["residual"].append(float("nan"))
    return cells


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and np.all(arr == arr[0]):
        # identical entries have no spread; also covers all-inf sentinel cells,
        # where arr.std() would produce nan
        return float(arr[0]), 0.0, int(arr.size)
    return float(arr.mean()), float(arr.std()), int(arr.size)


def _test_ids(volumes, split):
    if split is not None:
        return list(split.test)
    return sorted(volumes) if isinstance(volumes, dict) else list(range(len(volumes)))


def run_comparison(methods, volumes, split=None, ratios=(0.1, 0.3, 0.5), seed=0,
                   noise_sigma=0.0, checkpoints=None, window_T=3,
                   mask_kind="cartesian-1d-gaussian", center_fraction=0.04,
                   admm_cfg=None, csv_path=None, dataset_id="phantom-test"):
    """Reconstruct every test slice per method and ratio; aggregate
    PSNR/SSIM/NMSE into a MetricsReport (population std)."""
    generators = _resolve_checkpoints(methods, checkpoints)
    ids = _test_ids(volumes, split)
    if not ids:
        raise DomainError("empty test split")
    cells = _run_protocol(methods, volumes, ids, tuple(ratios), (noise_sigma,), seed,
                          generators, window_T, mask_kind, center_fraction,
                          admm_cfg, with_residual=False)
    rows = {}
    for (method, ratio, _s), metrics in cells.items():
        for name in ("psnr", "ssim", "nmse"):
            rows[(method, ratio, name)] = _mean_std(metrics[name])
    report = MetricsReport(rows=rows, metadata={
        "dataset": dataset_id, "noise_sigma": noise_sigma, "seed": seed,
        "granularity": "per-slice",
    })
    if csv_path is not None:
        report.to_csv(csv_path)
    return report


def run_noise_sweep(methods, volumes, split=None, ratios=(0.1, 0.3, 0.5),
                    sigma_grid=(0.0, 0.01, 0.05, 0.1), seed=0, checkpoints=None,
                    window_T=3, mask_kind="cartesian-1d-gaussian", center_fraction=0.04,
                    admm_cfg=None, out_dir=None, dataset_id="phantom-test"):
    """PSNR and residual-noise-estimate curves over a noise grid. With out_dir
    set, writes noise_sweep.csv plus one chart per ratio."""
    grid = tuple(float(s) for s in sigma_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError(f"sigma grid must be strictly increasing, got {grid}")
    generators = _resolve_checkpoints(methods, checkpoints)
    ids = _test_ids(volumes, split)
    if not ids:
        raise DomainError("empty test split")
    cells = _run_protocol(methods, volumes, ids, tuple(ratios), grid, seed,
                          generators, window_T, mask_kind, center_fraction,
                          admm_cfg, with_residual=True)
    rows = {}
    for (method, ratio, sigma), metrics in cells.items():
        p_mean, p_std, _n = _mean_std(metrics["psnr"])
        res = np.asarray(metrics["residual"], dtype=np.float64)
        measured = res[~np.isnan(res)]
        rows[(method, ratio, sigma)] = {
            "psnr_mean": p_mean, "psnr_std": p_std,
            "residual_sigma_mean": float(measured.mean()) if measured.size else float("nan"),
            "residual_n": int(measured.size),
        }
    sweep = NoiseSweep(sigma_grid=grid, rows=rows, metadata={
        "dataset": dataset_id, "seed": seed, "granularity": "per-slice",
    })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "noise_sweep.csv")
        sweep.to_csv(csv_path)
        from .plots import plot_noise_sweep
        plot_noise_sweep(csv_path, out_dir)
    return sweep

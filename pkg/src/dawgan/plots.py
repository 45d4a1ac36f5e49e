"""Line charts for the harness CSVs.

Uses the Agg backend with fixed styling and a fixed PNG metadata block, so
re-rendering the same CSV yields byte-identical files.
"""

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import FormatError

_SAVE_KWARGS = {"dpi": 100, "metadata": {"Software": "dawgan"}}


def _read_rows(csv_path, required):
    try:
        with open(csv_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise FormatError(f"{csv_path}: empty CSV")
            for column in required:
                if column not in reader.fieldnames:
                    raise FormatError(f"{csv_path}: missing column {column!r}")
            rows = list(reader)
    except OSError as exc:
        raise FormatError(f"cannot read {csv_path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{csv_path}: CSV has a header but no rows")
    return rows


def _save(fig, path):
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_noise_sweep(csv_path, out_dir):
    """One chart per ratio: PSNR (mean over slices) against sigma, one line
    per method. Returns the written file paths."""
    rows = _read_rows(csv_path, ("method", "ratio", "sigma", "psnr_mean"))
    ratios = sorted({float(r["ratio"]) for r in rows})
    methods = sorted({r["method"] for r in rows})
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for ratio in ratios:
        fig, ax = plt.subplots(figsize=(5, 4))
        for method in methods:
            pts = sorted((float(r["sigma"]), float(r["psnr_mean"]))
                         for r in rows
                         if r["method"] == method and float(r["ratio"]) == ratio)
            pts = [(s, p) for s, p in pts if math.isfinite(p)]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
        ax.set_xlabel("noise sigma")
        ax.set_ylabel("PSNR (dB)")
        ax.set_title(f"PSNR vs noise level, ratio {ratio:g}")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"noise_sweep_ratio_{ratio:g}.png")
        _save(fig, path)
        written.append(path)
    return written


def plot_comparison(csv_path, out_dir):
    """One chart per metric: metric mean against undersampling ratio, one line
    per method. Returns the written file paths."""
    rows = _read_rows(csv_path, ("method", "ratio", "metric", "mean"))
    metrics = sorted({r["metric"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(5, 4))
        for method in methods:
            pts = sorted((float(r["ratio"]), float(r["mean"]))
                         for r in rows
                         if r["method"] == method and r["metric"] == metric)
            pts = [(x, y) for x, y in pts if math.isfinite(y)]
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
        ax.set_xlabel("undersampling ratio")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs ratio")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"comparison_{metric}.png")
        _save(fig, path)
        written.append(path)
    return written

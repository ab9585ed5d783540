"""Report figures written straight to PNG files (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .saliency import SaliencyMap, upsample  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss_curve(history: Sequence[dict], path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [r["epoch"] for r in history]
    ax.plot(epochs, [r["mean_train_loss"] for r in history], marker="o", label="train MSE")
    val = [r.get("val_rmse", float("nan")) for r in history]
    if np.isfinite(val).any():
        ax.plot(epochs, np.square(val), marker="s", label="val MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean squared error")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_ablation(rows, path) -> Path:
    """Grouped bars of PC, MAE and RMSE per variant."""
    names = [r.variant for r in rows]
    metrics = {"PC": [r.report.pc for r in rows], "MAE": [r.report.mae for r in rows],
               "RMSE": [r.report.rmse for r in rows]}
    x = np.arange(len(names))
    width = 0.26
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    for i, (label, vals) in enumerate(metrics.items()):
        ax.bar(x + (i - 1) * width, vals, width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=15)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_title("ablation (mean over folds)")
    ax.legend()
    return _save(fig, path)


def plot_bench(result, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.8))
    for kernel, marker in (("selective_scan", "o"), ("attention", "s")):
        pts = [(r.length, r.median_s) for r in result.rows if r.kernel == kernel]
        n, t = map(np.asarray, zip(*pts))
        ax.loglog(n, t, marker=marker, label=f"{kernel} (slope {result.exponents[kernel]:.2f})")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("median seconds")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_saliency_overlay(image_hwc: np.ndarray, smap: SaliencyMap, path, alpha: float = 0.45) -> Path:
    """The image with its bilinearly upsampled map blended on top."""
    img = np.clip(np.asarray(image_hwc, dtype=np.float64), 0.0, 1.0)
    heat = upsample(smap.grid, img.shape[0])
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    axes[0].imshow(img)
    axes[0].set_title("input")
    axes[1].imshow(img)
    axes[1].imshow(heat, cmap="jet", alpha=alpha, vmin=0.0, vmax=1.0)
    axes[1].set_title(f"{smap.branch} saliency")
    for ax in axes:
        ax.axis("off")
    return _save(fig, path)

"""Figure rendering for the report paths (headless matplotlib).

Every command that writes delimited output also drops a PNG next to it:
training emits loss/validation curves, evaluation a per-image metric chart,
inference a false-color preview and the probed spectrum plot.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(history: list, path, title: str = "training"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epochs = [row["epoch"] for row in history]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, [row["train_loss"] for row in history], color="tab:blue",
             label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:blue")
    ax1.set_yscale("log")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [row["val_psnr"] for row in history], color="tab:orange",
             label="val PSNR")
    ax2.set_ylabel("validation PSNR (dB)", color="tab:orange")
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(rows: list, path, title: str = "evaluation"):
    """Grouped bar chart: one panel per metric, one bar per image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [r.image_id for r in rows]
    panels = [("psnr", "PSNR (dB)"), ("ssim", "SSIM"), ("sam", "SAM (deg)"),
              ("ergas", "ERGAS")]
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.2))
    for ax, (attr, label) in zip(axes, panels):
        ax.bar(range(len(rows)), [getattr(r, attr) for r in rows], color="#4878d0")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(names, rotation=60, fontsize=7)
        ax.set_title(label, fontsize=9)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_spectrum_plot(spectrum: np.ndarray, path, wavelengths=None,
                       coord: tuple | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = wavelengths if wavelengths is not None else np.arange(len(spectrum))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(x, spectrum, marker="o")
    ax.set_xlabel("wavelength (nm)" if wavelengths is not None else "band index")
    ax.set_ylabel("reflectance")
    if coord is not None:
        ax.set_title(f"spectrum at pixel {coord}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def false_color(cube: np.ndarray, bands: tuple) -> np.ndarray:
    """8-bit RGB composite from three band indices."""
    rgb = np.stack([cube[:, :, b] for b in bands], axis=2)
    return (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_false_color(cube: np.ndarray, bands: tuple, path):
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(false_color(cube, bands), mode="RGB").save(path)

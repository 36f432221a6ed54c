"""Reference quality metrics for reconstructed cubes.

All four metrics assume a reference with dynamic range [0, 1] and operate on
(H, W, C) arrays:

  psnr   10*log10(1/MSE) in dB over all entries, capped at 100 dB
  ssim   mean over bands of windowed SSIM (uniform window, stride 1)
  sam    mean per-pixel spectral angle in degrees
  ergas  dimensionless global relative error, scaled by 1/s

Reports are written as CSV (one row per image plus a trailing mean row) with
printing precision matched across the toolkit.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SAM_NORM_FLOOR = 1e-8


def psnr(x: np.ndarray, ref: np.ndarray) -> float:
    x, ref = np.asarray(x, np.float64), np.asarray(ref, np.float64)
    mse = float(((x - ref) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP
    return max(0.0, 10.0 * np.log10(1.0 / mse))


def _window_means(band: np.ndarray, win: int) -> np.ndarray:
    s0, s1 = band.strides
    h, w = band.shape
    view = np.lib.stride_tricks.as_strided(
        band, shape=(h - win + 1, w - win + 1, win, win), strides=(s0, s1, s0, s1),
        writeable=False)
    return view.mean(axis=(2, 3))


def ssim(x: np.ndarray, ref: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Band-averaged SSIM with a uniform window (clipped to the image size)."""
    x, ref = np.asarray(x, np.float64), np.asarray(ref, np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    h, w, bands = x.shape
    win = min(window, h, w)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for b in range(bands):
        xa, ra = x[:, :, b], ref[:, :, b]
        mx = _window_means(xa, win)
        mr = _window_means(ra, win)
        mxx = _window_means(xa * xa, win)
        mrr = _window_means(ra * ra, win)
        mxr = _window_means(xa * ra, win)
        vx = mxx - mx * mx
        vr = mrr - mr * mr
        cov = mxr - mx * mr
        num = (2 * mx * mr + c1) * (2 * cov + c2)
        den = (mx * mx + mr * mr + c1) * (vx + vr + c2)
        vals.append(float((num / den).mean()))
    return float(np.mean(vals))


def sam(x: np.ndarray, ref: np.ndarray) -> float:
    """Mean spectral angle in degrees; near-zero-norm pixels are skipped."""
    x, ref = np.asarray(x, np.float64), np.asarray(ref, np.float64)
    xf = x.reshape(-1, x.shape[2])
    rf = ref.reshape(-1, ref.shape[2])
    nx = np.linalg.norm(xf, axis=1)
    nr = np.linalg.norm(rf, axis=1)
    keep = (nx >= SAM_NORM_FLOOR) & (nr >= SAM_NORM_FLOOR)
    if not keep.any():
        return 0.0
    cosine = (xf[keep] * rf[keep]).sum(axis=1) / (nx[keep] * nr[keep])
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))).mean())


def ergas(x: np.ndarray, ref: np.ndarray, s: int) -> float:
    """100/s * sqrt(mean over bands of (RMSE_band / mean_band)^2).

    Bands whose reference is identically zero are excluded with a warning.
    """
    x, ref = np.asarray(x, np.float64), np.asarray(ref, np.float64)
    bands = ref.shape[2]
    terms = []
    for b in range(bands):
        mu = float(ref[:, :, b].mean())
        if np.abs(ref[:, :, b]).max() == 0.0:
            warnings.warn(f"ergas: reference band {b} is all zero; excluded")
            continue
        rmse = float(np.sqrt(((x[:, :, b] - ref[:, :, b]) ** 2).mean()))
        terms.append((rmse / mu) ** 2)
    if not terms:
        return 0.0
    return float(100.0 / s * np.sqrt(np.mean(terms)))


@dataclass
class MetricsRow:
    image_id: str
    psnr: float
    ssim: float
    sam: float
    ergas: float


def evaluate_cube(x: np.ndarray, ref: np.ndarray, s: int, image_id: str) -> MetricsRow:
    return MetricsRow(image_id=image_id, psnr=psnr(x, ref), ssim=ssim(x, ref),
                      sam=sam(x, ref), ergas=ergas(x, ref, s))


def mean_row(rows: list) -> MetricsRow:
    return MetricsRow(
        image_id="mean",
        psnr=float(np.mean([r.psnr for r in rows])),
        ssim=float(np.mean([r.ssim for r in rows])),
        sam=float(np.mean([r.sam for r in rows])),
        ergas=float(np.mean([r.ergas for r in rows])),
    )


def format_values(row: MetricsRow) -> tuple:
    """Report precision: PSNR/SAM/ERGAS to 2 decimals, SSIM to 4."""
    return (f"{row.psnr:.2f}", f"{row.ssim:.4f}", f"{row.sam:.2f}", f"{row.ergas:.2f}")


def write_metrics_csv(rows: list, path) -> MetricsRow:
    """Write per-image rows plus the trailing mean row; returns the mean."""
    summary = mean_row(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "psnr", "ssim", "sam", "ergas"])
        for row in list(rows) + [summary]:
            writer.writerow([row.image_id, *format_values(row)])
    return summary

"""Non-learned reference reconstruction.

Bicubic spatial upsampling composed with a least-squares affine spectral
regression (multispectral -> hyperspectral) fitted on training pixels.  Used
as the performance floor a trained pipeline must clear.
"""

from __future__ import annotations

import numpy as np

from . import imageops as I
from . import tensor as T
from .tensor import Tensor


def fit_spectral_regression(samples) -> np.ndarray:
    """Affine map (c+1, C) minimizing ||[F 1] W - G||^2 over training pixels."""
    xs, ys = [], []
    for sample in samples:
        big_ms = np.asarray(sample["F"], np.float64)
        ref = np.asarray(sample["G"], np.float64)
        xs.append(big_ms.reshape(-1, big_ms.shape[2]))
        ys.append(ref.reshape(-1, ref.shape[2]))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    x1 = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    w, *_ = np.linalg.lstsq(x1, y, rcond=None)
    return w


def baseline_reconstruct(f: np.ndarray, s: int, weights: np.ndarray) -> np.ndarray:
    """Upsample bicubically, lift bands by the fitted regression, clip."""
    with T.no_grad():
        up = I.bicubic_resize(Tensor(np.asarray(f, np.float64), dtype=np.float64),
                              float(s)).data
    h, w, c = up.shape
    flat = np.concatenate([up.reshape(-1, c), np.ones((h * w, 1))], axis=1)
    lifted = (flat @ weights).reshape(h, w, weights.shape[1])
    return np.clip(lifted, 0.0, 1.0)

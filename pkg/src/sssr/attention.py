"""Nonlocal residual post-processor with windowed top-k attention.

Each pixel attends to the most similar pixels inside a square window around
it.  Similarities come from a patch embedding (one PxP convolution), projected
to per-head queries and keys; only the top fraction of candidates is kept
(ties broken toward the lower raster index), softmax-normalized, and used to
mix 1x1-projected values.  Out-of-image candidates are excluded from the
ranking pool entirely, so border pixels select from their valid neighbors
only.  The filter runs twice, the second time on the image circularly shifted
by half the window, which moves the borders into the interior; a zero-
initialized output conv makes the whole module an exact no-op at start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import imageops as I
from . import tensor as T
from .nn import Conv2d, Layer, Linear
from .tensor import Tensor


@dataclass
class AttnConfig:
    window: int = 11
    patch: int = 11
    embed_dim: int = 8
    heads: int = 4
    topk_ratio: float = 0.1

    def __post_init__(self):
        if self.window % 2 == 0 or self.patch % 2 == 0:
            raise ValueError("window and patch sizes must be odd")
        if not 0 < self.topk_ratio <= 1:
            raise ValueError("topk_ratio must lie in (0, 1]")

    @property
    def topk(self) -> int:
        """Number of retained candidates per pixel (at interior pixels)."""
        return max(1, math.ceil(self.topk_ratio * self.window ** 2))


def patch_image(x: np.ndarray, patch: int) -> np.ndarray:
    """(H,W,C) -> (H,W,P*P*C) neighborhoods in raster order, zeros outside.

    The center block of each output vector equals the source pixel.
    """
    if patch % 2 == 0:
        raise ValueError("patch size must be odd")
    h, w, c = x.shape
    half = patch // 2
    padded = np.pad(x, ((half, half), (half, half), (0, 0)))
    s0, s1, s2 = padded.strides
    win = np.lib.stride_tricks.as_strided(
        padded, shape=(h, w, patch, patch, c), strides=(s0, s1, s0, s1, s2),
        writeable=False)
    return np.ascontiguousarray(win).reshape(h, w, patch * patch * c)


_WINDOW_CACHE: dict = {}


def window_indices(h: int, w: int, window: int) -> np.ndarray:
    """(h*w, window^2) flat neighbor indices in raster order, -1 off-image."""
    key = (h, w, window)
    cached = _WINDOW_CACHE.get(key)
    if cached is not None:
        return cached
    half = window // 2
    offs = np.arange(-half, half + 1)
    ys = np.arange(h)[:, None, None, None] + offs[None, None, :, None]
    xs = np.arange(w)[None, :, None, None] + offs[None, None, None, :]
    ys = np.broadcast_to(ys, (h, w, window, window))
    xs = np.broadcast_to(xs, (h, w, window, window))
    valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    idx = np.where(valid, ys * w + xs, -1).reshape(h * w, window * window)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    _WINDOW_CACHE[key] = idx
    return idx


def topk_select(scores: np.ndarray, valid: np.ndarray, k: int):
    """Stable top-k selection per row, restricted to valid candidates.

    Returns (order, keep): the k best column indices per row (ties go to the
    lower column, i.e. raster, index) and a boolean mask that is False where a
    row had fewer than k valid candidates.
    """
    neg = -np.inf
    ranked = np.where(valid, scores, neg)
    order = np.argsort(-ranked, axis=1, kind="stable")[:, :k]
    keep = np.take_along_axis(ranked, order, axis=1) > neg
    return order, keep


def topk_mask(scores: np.ndarray, valid: np.ndarray, k: int) -> np.ndarray:
    """Boolean keep-mask over the full candidate axis (reporting helper)."""
    order, keep = topk_select(scores, valid, k)
    mask = np.zeros_like(valid)
    np.put_along_axis(mask, order, keep, axis=1)
    return mask


class AttentionHead(Layer):
    """Query/key projections over the shared embedding, value and output
    projections over the image itself (all 1x1, i.e. per-pixel affine)."""

    def __init__(self, channels: int, embed_dim: int, rng: np.random.Generator):
        self.query = Linear(embed_dim, embed_dim, rng=rng)
        self.key = Linear(embed_dim, embed_dim, rng=rng)
        self.value = Linear(channels, channels, rng=rng)
        self.out = Linear(channels, channels, rng=rng)


def head_attention(x: Tensor, embedded: Tensor, head: AttentionHead,
                   cfg: AttnConfig) -> Tensor:
    """One head of windowed top-k attention; returns (H,W,C).

    Scores are computed over the whole window, but only the selected
    candidates enter the softmax and the value mix, so the heavy value path
    scales with k rather than window^2.
    """
    h, w, c = x.shape
    n = h * w
    e2 = T.reshape(embedded, (n, cfg.embed_dim))
    x2 = T.reshape(x, (n, c))
    nbr = window_indices(h, w, cfg.window)
    valid = nbr >= 0

    q = head.query(e2)
    k = T.reshape(T.gather_rows(head.key(e2), nbr), (n, cfg.window ** 2, cfg.embed_dim))
    scores = T.mul(T.rowwise_dot(q, k), 1.0 / math.sqrt(cfg.embed_dim))

    order, keep = topk_select(scores.data, valid, cfg.topk)
    weights = T.masked_softmax(T.take_cols(scores, order), keep, axis=1)

    picked = np.where(keep, np.take_along_axis(nbr, order, axis=1), -1)
    v = T.reshape(T.gather_rows(head.value(x2), picked), (n, cfg.topk, c))
    mixed = T.weighted_rows(weights, v)
    return T.reshape(head.out(mixed), (h, w, c))


class Mha(Layer):
    """Multi-head attention: shared patch embedding, per-head attention,
    concatenation, and a 1x1 projection back to the input channel count."""

    def __init__(self, channels: int, cfg: AttnConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = Conv2d(channels, cfg.embed_dim, cfg.patch, rng=rng)
        self.heads = [AttentionHead(channels, cfg.embed_dim, rng)
                      for _ in range(cfg.heads)]
        self.proj = Linear(cfg.heads * channels, channels, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        h, w, c = x.shape
        embedded = self.embed(x)
        outs = [head_attention(x, embedded, head, self.cfg) for head in self.heads]
        stacked = T.concat([T.reshape(o, (h * w, c)) for o in outs], axis=1)
        return T.reshape(self.proj(stacked), (h, w, c))


class PostProcessor(Layer):
    """Residual nonlocal filter: attention in place, then attention on the
    half-window-shifted image (undone afterwards), then a zero-initialized
    conv head added back onto the input."""

    def __init__(self, channels: int, cfg: AttnConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.mha_plain = Mha(channels, cfg, rng)
        self.mha_shifted = Mha(channels, cfg, rng)
        self.head = Conv2d(channels, channels, 3, rng=rng, zero_init=True)

    def __call__(self, u: Tensor) -> Tensor:
        shift = self.cfg.window // 2
        y = self.mha_plain(u)
        y = I.roll2d(self.mha_shifted(I.roll2d(y, shift)), -shift)
        return T.add(u, self.head(y))

"""Unfolded fusion of the spatial and spectral reconstructions.

The fused cube u must satisfy a radiometric constraint tying its high
frequencies to those of the geometry carrier (the upsampled multispectral
estimate), modulated by the ratio of low-frequency content.  Rearranged, the
data term is the diagonal quadratic

    0.5 * || u * low_guide - low_spectral * high_guide ||^2

whose gradient is  low_guide * (u * low_guide - low_spectral * high_guide).
The three context images are produced per stage by learned low-frequency
estimation (LFE) convolution stacks and a high-frequency injection (HFI)
residual network; no parameters are shared between stage instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imageops as I
from . import tensor as T
from .nn import Conv2d, Layer, ProxNet, ResBlock, param
from .tensor import Tensor


@dataclass
class FusionContext:
    """Per-stage images entering the fidelity gradient, all (H,W,C).

    ``low_guide`` entries act as divisors in the closed-form stationary
    point; magnitudes are clamped to at least ``epsilon`` there (the gradient
    itself uses products only).
    """

    low_guide: Tensor     # low frequencies of the spatial estimate, HS bands
    low_spectral: Tensor  # low frequencies of the upsampled spectral estimate
    high_guide: Tensor    # high-frequency geometry carrier
    epsilon: float = 1e-6


def fusion_gradient(u: Tensor, ctx: FusionContext) -> Tensor:
    """Element-wise gradient of the radiometric data term."""
    misfit = T.sub(T.mul(u, ctx.low_guide), T.mul(ctx.low_spectral, ctx.high_guide))
    return T.mul(ctx.low_guide, misfit)


def fusion_energy(u: np.ndarray, ctx: FusionContext) -> float:
    d = u * ctx.low_guide.data - ctx.low_spectral.data * ctx.high_guide.data
    return 0.5 * float((d ** 2).sum())


def stationary_point(ctx: FusionContext) -> np.ndarray:
    """Closed-form minimizer (low_spectral * high_guide) / low_guide with the
    divisor clamped to magnitude >= epsilon."""
    denom = ctx.low_guide.data
    safe = np.where(np.abs(denom) < ctx.epsilon,
                    np.where(denom < 0, -ctx.epsilon, ctx.epsilon), denom)
    return ctx.low_spectral.data * ctx.high_guide.data / safe


class Lfe(Layer):
    """Low-frequency estimation: three 3x3 convs with ReLUs between."""

    def __init__(self, c_in: int, c_out: int, features: int, rng: np.random.Generator):
        self.conv1 = Conv2d(c_in, features, 3, rng=rng)
        self.conv2 = Conv2d(features, features, 3, rng=rng)
        self.conv3 = Conv2d(features, c_out, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv3(T.relu(self.conv2(T.relu(self.conv1(x)))))


class Hfi(Layer):
    """High-frequency injection: residual blocks over the concatenation of the
    spatial estimate, the upsampled spectral estimate, and the low-frequency
    guide."""

    def __init__(self, c_ms: int, c_hs: int, features: int, blocks: int,
                 rng: np.random.Generator):
        self.entry = Conv2d(c_ms + 2 * c_hs, features, 3, rng=rng)
        self.blocks = [ResBlock(features, rng) for _ in range(blocks)]
        self.exit = Conv2d(features, c_hs, 3, rng=rng)

    def __call__(self, u_sr: Tensor, u_ssr_up: Tensor, low_guide: Tensor) -> Tensor:
        t = self.entry(T.concat([u_sr, u_ssr_up, low_guide], axis=2))
        for block in self.blocks:
            t = block(t)
        return self.exit(t)


class FusionStage(Layer):
    def __init__(self, c_ms: int, c_hs: int, features: int, blocks: int,
                 hfi_blocks: int, rng: np.random.Generator, tau_init: float = 0.1):
        self.log_tau = param(np.log(tau_init))
        self.lfe_spectral = Lfe(c_hs, c_hs, features, rng)
        self.lfe_guide = Lfe(c_ms, c_hs, features, rng)
        self.hfi = Hfi(c_ms, c_hs, features, hfi_blocks, rng)
        self.prox = ProxNet(c_hs, features, blocks, rng, block_kind="res",
                            aux_channels=c_ms)

    def tau(self) -> Tensor:
        return T.exp(self.log_tau)

    def context(self, u_sr: Tensor, u_ssr_up: Tensor, lowpass_sr: Tensor,
                epsilon: float) -> FusionContext:
        low_guide = self.lfe_guide(lowpass_sr)
        low_spectral = self.lfe_spectral(u_ssr_up)
        high_guide = self.hfi(u_sr, u_ssr_up, low_guide)
        return FusionContext(low_guide=low_guide, low_spectral=low_spectral,
                             high_guide=high_guide, epsilon=epsilon)


class FusionSolver(Layer):
    """Combines the (H,W,c) spatial and (h,w,C) spectral estimates into the
    fused (H,W,C) cube over K proximal-gradient stages."""

    def __init__(self, c_ms: int, c_hs: int, s: int, stages: int, features: int,
                 blocks: int, rng: np.random.Generator, hfi_blocks: int = 2,
                 epsilon: float = 1e-6):
        self.scale = s
        self.epsilon = epsilon
        self.init_lfe = Lfe(c_ms, c_hs, features, rng)
        self.init_hfi = Hfi(c_ms, c_hs, features, hfi_blocks, rng)
        self.stages = [FusionStage(c_ms, c_hs, features, blocks, hfi_blocks, rng)
                       for _ in range(stages)]

    def unfold(self, u_sr: Tensor, u_ssr: Tensor):
        s = float(self.scale)
        u_ssr_up = I.bicubic_resize(u_ssr, s)
        # low-pass of the spatial estimate: bicubic down then up by s
        lowpass_sr = I.bicubic_resize(I.bicubic_resize(u_sr, 1.0 / s), s)

        u = self.init_hfi(u_sr, u_ssr_up, self.init_lfe(lowpass_sr))
        per_stage = []
        for stage in self.stages:
            ctx = stage.context(u_sr, u_ssr_up, lowpass_sr, self.epsilon)
            step = T.mul(stage.tau(), fusion_gradient(u, ctx))
            u = stage.prox(T.sub(u, step), aux=u_sr)
            per_stage.append(u)
        return u, per_stage

"""Unfolded spatial super-resolution solver.

K proximal-gradient stages map the low-resolution multispectral image to a
high-resolution estimate.  Each stage takes a descent step on the observation
fidelity 0.5*||D(u) - f||^2 with a learned downsampler D (strided convolution
chain following the prime factorization of the sampling factor) and a learned
upsampler in place of the adjoint, then applies a residual proximity network.

The upsampler comes in four configurations: the strided transposed-convolution
chain can be built per prime factor ("progressive") or as one stride-s step
("single"), and the descent direction is either the plain upsampled residual
("forward") or the back-projection flavor that adds a learned correction
kernel on top ("bp").  All four are selectable from configuration alone.
"""

from __future__ import annotations

import numpy as np

from . import imageops as I
from . import tensor as T
from .nn import Conv2d, ConvTranspose2d, Layer, ProxNet, delta_kernel, param
from .tensor import Tensor


def prime_factors(s: int) -> list[int]:
    """Ascending prime factorization; empty for s = 1."""
    if s < 1:
        raise ValueError(f"sampling factor must be >= 1, got {s}")
    factors = []
    n, p = s, 2
    while n > 1:
        while n % p == 0:
            factors.append(p)
            n //= p
        p += 1 if p == 2 else 2
    return factors


class DownChain(Layer):
    """Channel-preserving strided convolution chain, one conv per prime factor
    (stride p, kernel 2p+1)."""

    def __init__(self, channels: int, s: int, rng: np.random.Generator):
        self.convs = [Conv2d(channels, channels, 2 * p + 1, stride=p, rng=rng)
                      for p in prime_factors(s)]

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            if x.shape[0] % conv.stride or x.shape[1] % conv.stride:
                raise T.ShapeError(
                    f"stride {conv.stride} does not divide {x.shape[:2]}")
            x = conv(x)
        return x


class UpChain(Layer):
    """Mirror of the downsampler: transposed convolutions in reverse factor
    order plus a 3x3 refinement conv.  In back-projection mode an extra 3x3
    correction kernel is applied to the upsampled residual."""

    def __init__(self, channels: int, s: int, rng: np.random.Generator,
                 steps: str = "progressive", back_projection: bool = True):
        if steps == "progressive":
            factors = list(reversed(prime_factors(s)))
        elif steps == "single":
            factors = [s] if s > 1 else []
        else:
            raise ValueError(f"unknown upsampler steps: {steps}")
        self.deconvs = [ConvTranspose2d(channels, channels, 2 * p + 1, stride=p, rng=rng)
                        for p in factors]
        self.refine = Conv2d(channels, channels, 3, rng=rng)
        self.correction = Conv2d(channels, channels, 3, rng=rng) if back_projection else None

    def __call__(self, x: Tensor) -> Tensor:
        for deconv in self.deconvs:
            x = deconv(x)
        x = self.refine(x)
        if self.correction is not None:
            x = self.correction(x)
        return x


class SrStage(Layer):
    """One unfolded stage: step size, downsampler, upsampler, proximity net."""

    def __init__(self, channels: int, s: int, features: int, blocks: int,
                 rng: np.random.Generator, steps: str = "progressive",
                 back_projection: bool = True, tau_init: float = 0.1):
        # raw exponent keeps the learned step size positive
        self.log_tau = param(np.log(tau_init))
        self.down = DownChain(channels, s, rng)
        self.up = UpChain(channels, s, rng, steps=steps, back_projection=back_projection)
        self.prox = ProxNet(channels, features, blocks, rng, block_kind="res")

    def tau(self) -> Tensor:
        return T.exp(self.log_tau)

    def direction(self, u: Tensor, f: Tensor) -> Tensor:
        """Upsampled low-resolution residual Up(D(u) - f)."""
        return self.up(T.sub(self.down(u), f))


class SpatialSolver(Layer):
    def __init__(self, channels: int, s: int, stages: int, features: int,
                 blocks: int, rng: np.random.Generator,
                 steps: str = "progressive", back_projection: bool = True,
                 residual_sign: float = -1.0):
        # residual_sign -1 is the gradient-descent update; +1 matches the
        # classical additive back-projection recursion
        self.scale = s
        self.residual_sign = residual_sign
        self.stages = [SrStage(channels, s, features, blocks, rng,
                               steps=steps, back_projection=back_projection)
                       for _ in range(stages)]

    def unfold(self, f: Tensor):
        """Run all stages from the bicubic initialization.

        Returns the final estimate and the per-stage outputs (the training
        loss penalizes every stage).
        """
        u = I.bicubic_resize(f, float(self.scale))
        per_stage = []
        for stage in self.stages:
            step = T.mul(stage.tau(), stage.direction(u, f))
            u = stage.prox(T.add(u, T.mul(step, self.residual_sign)))
            per_stage.append(u)
        return u, per_stage


def tie_adjoint(stage: SrStage) -> SrStage:
    """Configure the stage's upsampler as the exact adjoint of its downsampler.

    Copies the down kernels into the transposed chain in reverse order, turns
    the refinement (and correction) convs into identities, zeroes all biases,
    and makes the proximity net the identity.  Used by the verification
    harness: in this configuration the stage direction equals the true
    gradient of 0.5*||D(u) - f||^2.
    """
    convs = stage.down.convs
    deconvs = stage.up.deconvs
    if len(deconvs) != len(convs):
        raise ValueError("adjoint tying requires a progressive upsampler")
    for conv, deconv in zip(convs, reversed(deconvs)):
        deconv.weight.data = conv.weight.data.copy()
        conv.bias.data = np.zeros_like(conv.bias.data)
        deconv.bias.data = np.zeros_like(deconv.bias.data)
    ch = stage.up.refine.weight.data.shape[2]
    stage.up.refine.weight.data = delta_kernel(3, ch)
    stage.up.refine.bias.data = np.zeros_like(stage.up.refine.bias.data)
    if stage.up.correction is not None:
        stage.up.correction.weight.data = delta_kernel(3, ch)
        stage.up.correction.bias.data = np.zeros_like(stage.up.correction.bias.data)
    stage.prox.make_identity()
    return stage


def fidelity_value(stage: SrStage, u: np.ndarray, f: np.ndarray) -> float:
    """0.5*||D(u) - f||^2 with the stage's current downsampler."""
    with T.no_grad():
        r = T.sub(stage.down(Tensor(u, dtype=np.float64)), Tensor(f, dtype=np.float64))
        return 0.5 * float((r.data ** 2).sum())


def power_iteration_bound(stage: SrStage, shape: tuple, iters: int = 30,
                          seed: int = 0) -> float:
    """Largest eigenvalue of D^T D estimated by power iteration (Lipschitz
    constant of the fidelity gradient).  The adjoint is realized by the
    backward pass, so the stage must be bias-free (see ``tie_adjoint``).
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        t = Tensor(v, requires_grad=True, dtype=np.float64)
        down = stage.down(t)
        down.backward(down.data)
        w = t.grad
        lam = float(np.linalg.norm(w))
        v = w / max(lam, 1e-30)
    return lam

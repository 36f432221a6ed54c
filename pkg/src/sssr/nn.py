"""Parameterized building blocks shared by the three unfolded solvers.

``Layer`` gives every network object a canonical parameter walk (attribute
order, lists by index) used for checkpointing, optimization, and the startup
parameter-count signature.  Trainable tensors have ``requires_grad`` set;
non-trainable buffers (e.g. k-means centroids) are saved but never optimized.

Weight init is fan-in-scaled uniform for convolutions and affine maps, zero
for biases.
"""

from __future__ import annotations

import numpy as np

from . import imageops, tensor as T
from .tensor import Tensor


class Layer:
    """Base for parameter containers; subclasses are plain callables."""

    def named_params(self, prefix: str = ""):
        """Yield (path, tensor) for every Tensor in this subtree, in a
        deterministic attribute-insertion order."""
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield path, value
            elif isinstance(value, Layer):
                yield from value.named_params(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield from item.named_params(f"{path}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{path}.{i}", item

    def trainable_params(self):
        return [(p, t) for p, t in self.named_params() if t.requires_grad]

    def param_count(self, trainable_only: bool = True) -> int:
        return sum(t.size for _, t in self.named_params()
                   if t.requires_grad or not trainable_only)

    def astype(self, dtype) -> "Layer":
        """Convert every parameter in place (e.g. float64 for grad checks)."""
        for _, t in self.named_params():
            t.data = t.data.astype(dtype)
        return self

    def zero_all(self) -> "Layer":
        for _, t in self.named_params():
            t.data = np.zeros_like(t.data)
        return self


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = float(np.sqrt(6.0 / max(1, fan_in)))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def param(data, trainable: bool = True) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=trainable)


class Conv2d(Layer):
    """Square odd-kernel convolution with implicit (k-1)/2 zero padding."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1,
                 rng: np.random.Generator | None = None, bias: bool = True,
                 zero_init: bool = False):
        self.stride = stride
        self.pad = (k - 1) // 2
        if zero_init:
            w = np.zeros((k, k, cin, cout), dtype=np.float32)
        else:
            w = he_uniform(rng, (k, k, cin, cout), fan_in=k * k * cin)
        self.weight = param(w)
        self.bias = param(np.zeros(cout, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return imageops.conv2d(x, self.weight, bias=self.bias,
                               stride=self.stride, pad=self.pad)


class ConvTranspose2d(Layer):
    """Strided transposed convolution: (h,w,cin) -> (h*stride, w*stride, cout).

    The kernel is stored in conv2d layout (k,k,cout,cin) so tying it to a
    downsampling convolution of the same shape gives the exact adjoint.
    """

    def __init__(self, cin: int, cout: int, k: int, stride: int,
                 rng: np.random.Generator | None = None, bias: bool = True):
        self.stride = stride
        self.weight = param(he_uniform(rng, (k, k, cout, cin), fan_in=k * k * cin))
        self.bias = param(np.zeros(cout, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return imageops.conv_transpose2d(x, self.weight, bias=self.bias,
                                         stride=self.stride)


class Linear(Layer):
    def __init__(self, din: int, dout: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((din, dout), dtype=np.float32)
        else:
            w = he_uniform(rng, (din, dout), fan_in=din)
        self.weight = param(w)
        self.bias = param(np.zeros(dout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class ResBlock(Layer):
    """conv-ReLU-conv plus identity skip, channel preserving."""

    def __init__(self, ch: int, rng: np.random.Generator):
        self.conv1 = Conv2d(ch, ch, 3, rng=rng)
        self.conv2 = Conv2d(ch, ch, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(x, self.conv2(T.relu(self.conv1(x))))


class ChannelAttention(Layer):
    """Global average pool -> bottleneck MLP -> sigmoid gate per channel."""

    def __init__(self, ch: int, reduction: int, rng: np.random.Generator):
        hidden = max(1, ch // reduction)
        self.fc1 = Linear(ch, hidden, rng=rng)
        self.fc2 = Linear(hidden, ch, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        ch = x.shape[2]
        pooled = T.reshape(T.mean(x, axis=(0, 1)), (1, ch))
        gate = T.sigmoid(self.fc2(T.relu(self.fc1(pooled))))
        return T.mul(x, T.reshape(gate, (1, 1, ch)))


class Rcab(Layer):
    """Residual channel attention block: conv-ReLU-conv, gated, plus skip."""

    def __init__(self, ch: int, reduction: int, rng: np.random.Generator):
        self.conv1 = Conv2d(ch, ch, 3, rng=rng)
        self.conv2 = Conv2d(ch, ch, 3, rng=rng)
        self.attn = ChannelAttention(ch, reduction, rng)

    def __call__(self, x: Tensor) -> Tensor:
        t = self.conv2(T.relu(self.conv1(x)))
        return T.add(x, self.attn(t))


class ProxNet(Layer):
    """Learned proximity operator: entry conv, residual trunk, exit conv, and a
    global skip from the (possibly concatenated) primary input.

    The trunk uses plain residual blocks or channel-attention blocks.  With a
    zero exit conv the operator is exactly the identity on its primary input.
    ``aux_channels`` > 0 concatenates a guidance image before the entry conv;
    the skip still comes from the primary input alone.
    """

    def __init__(self, ch: int, features: int, blocks: int,
                 rng: np.random.Generator, block_kind: str = "res",
                 reduction: int = 4, aux_channels: int = 0):
        self.entry = Conv2d(ch + aux_channels, features, 3, rng=rng)
        if block_kind == "res":
            self.blocks = [ResBlock(features, rng) for _ in range(blocks)]
        elif block_kind == "rcab":
            self.blocks = [Rcab(features, reduction, rng) for _ in range(blocks)]
        else:
            raise ValueError(f"unknown block kind: {block_kind}")
        self.exit = Conv2d(features, ch, 3, rng=rng)

    def __call__(self, x: Tensor, aux: Tensor | None = None) -> Tensor:
        t = x if aux is None else T.concat([x, aux], axis=2)
        t = self.entry(t)
        for block in self.blocks:
            t = block(t)
        return T.add(x, self.exit(t))

    def make_identity(self) -> "ProxNet":
        """Zero the exit conv so the operator becomes the identity."""
        self.exit.weight.data = np.zeros_like(self.exit.weight.data)
        if self.exit.bias is not None:
            self.exit.bias.data = np.zeros_like(self.exit.bias.data)
        return self


def delta_kernel(k: int, ch: int, dtype=np.float32) -> np.ndarray:
    """(k,k,ch,ch) kernel acting as the identity under same-padding conv."""
    w = np.zeros((k, k, ch, ch), dtype=dtype)
    mid = k // 2
    for c in range(ch):
        w[mid, mid, c, c] = 1.0
    return w

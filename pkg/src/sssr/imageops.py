"""Image-domain differentiable primitives on H x W x C tensors.

Everything here shares one layout: row-major height x width x channels, zero
padding, odd square kernels.  ``conv_transpose2d`` is the exact adjoint of
``conv2d`` for the same kernel, stride, and implicit (k-1)/2 padding; the
inner-product identity <conv2d(u), v> == <u, conv_transpose2d(v)> holds
bias-free up to float round-off.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make, as_tensor


def _check_kernel(kernel: np.ndarray):
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"kernel must be (k,k,Cin,Cout), got {kernel.shape}")
    if kernel.shape[0] % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {kernel.shape[0]}")


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    h, w, c = x.shape
    out = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    out[pad:pad + h, pad:pad + w] = x
    return out


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Padded sliding windows flattened to (Hout*Wout, k*k*C)."""
    h, w, c = x.shape
    hp = _pad2d(x, pad)
    hout = (h + 2 * pad - k) // stride + 1
    wout = (w + 2 * pad - k) // stride + 1
    cols = np.empty((hout, wout, k, k, c), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = hp[di:di + hout * stride:stride,
                                    dj:dj + wout * stride:stride]
    return cols.reshape(hout * wout, k * k * c), hout, wout


def _scatter_conv(src: np.ndarray, kernel: np.ndarray, stride: int, pad: int, out_hw: tuple):
    """Adjoint of the im2col contraction: spread (h,w,Cout) back to (H,W,Cin).

    One GEMM produces every offset's contribution; each then lands on a
    strided slice of the padded buffer, keeping accumulation order fixed.
    """
    oh, ow = out_hw
    k = kernel.shape[0]
    cin = kernel.shape[2]
    h, w, cout = src.shape
    cols = src.reshape(h * w, cout) @ kernel.reshape(-1, cout).T
    cols = cols.reshape(h, w, k, k, cin)
    buf = np.zeros((oh + 2 * pad, ow + 2 * pad, cin), dtype=src.dtype)
    for di in range(k):
        for dj in range(k):
            buf[di:di + h * stride:stride, dj:dj + w * stride:stride] += cols[:, :, di, dj]
    if pad:
        buf = buf[pad:pad + oh, pad:pad + ow]
    return buf


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution, zero padded, differentiable in input, kernel, and bias.

    ``x`` is (H,W,Cin), ``kernel`` (k,k,Cin,Cout) with k odd, output
    (floor((H+2*pad-k)/stride)+1, ..., Cout).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_kernel(kernel.data)
    if x.data.ndim != 3:
        raise ShapeError(f"conv2d input must be (H,W,C), got {x.data.shape}")
    if x.data.shape[2] != kernel.data.shape[2]:
        raise ShapeError(
            f"input channels {x.data.shape[2]} != kernel Cin {kernel.data.shape[2]}")
    k = kernel.data.shape[0]
    if x.data.shape[0] + 2 * pad < k or x.data.shape[1] + 2 * pad < k:
        raise ShapeError("padded input smaller than kernel")

    cols, hout, wout = _im2col(x.data, k, stride, pad)
    cin = kernel.data.shape[2]
    cout = kernel.data.shape[3]
    kmat = kernel.data.reshape(-1, cout)
    out2 = cols @ kmat
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (cout,):
            raise ShapeError(f"bias must be ({cout},), got {bias.data.shape}")
        out2 = out2 + bias.data
    out = out2.reshape(hout, wout, cout)
    xshape = x.data.shape
    del cols  # the backward pass regathers patches; retaining them is costly

    def backward(g):
        g2 = g.reshape(hout * wout, cout)
        hp = _pad2d(x.data, pad)
        dk = np.empty_like(kernel.data)
        for di in range(k):
            for dj in range(k):
                sl = hp[di:di + hout * stride:stride,
                        dj:dj + wout * stride:stride].reshape(hout * wout, cin)
                dk[di, dj] = sl.T @ g2
        grads = [(kernel, dk)]
        if x.requires_grad:
            grads.append((x, _scatter_conv(g.reshape(hout, wout, cout), kernel.data,
                                           stride, pad, (xshape[0], xshape[1]))))
        if bias is not None:
            grads.append((bias, g2.sum(axis=0)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


def conv_transpose2d(x, kernel, bias=None, stride: int = 1) -> Tensor:
    """Strided transposed convolution: (h,w,Cout) -> (h*stride, w*stride, Cin).

    The kernel keeps the ``conv2d`` layout (k,k,Cin,Cout); this op maps the
    kernel's output channels back to its input channels, making it the exact
    adjoint of ``conv2d`` with the same kernel, stride, and (k-1)/2 padding.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    _check_kernel(kernel.data)
    if x.data.ndim != 3:
        raise ShapeError(f"conv_transpose2d input must be (h,w,C), got {x.data.shape}")
    if x.data.shape[2] != kernel.data.shape[3]:
        raise ShapeError(
            f"input channels {x.data.shape[2]} != kernel Cout {kernel.data.shape[3]}")
    k = kernel.data.shape[0]
    pad = (k - 1) // 2
    h, w, _ = x.data.shape
    cin = kernel.data.shape[2]
    out = _scatter_conv(x.data, kernel.data, stride, pad, (h * stride, w * stride))
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (cin,):
            raise ShapeError(f"bias must be ({cin},), got {bias.data.shape}")
        out = out + bias.data

    def backward(g):
        gcols, gh, gw = _im2col(g, k, stride, pad)
        cout = kernel.data.shape[3]
        grads = [(kernel,
                  (gcols.T @ x.data.reshape(h * w, cout)).reshape(kernel.data.shape))]
        if x.requires_grad:
            grads.append((x, (gcols @ kernel.data.reshape(-1, cout)).reshape(h, w, cout)))
        if bias is not None:
            grads.append((bias, g.sum(axis=(0, 1))))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


# -- bicubic resampling -------------------------------------------------------

_RESIZE_CACHE: dict = {}


def _cubic_weight(t: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5."""
    t = np.abs(t)
    w = np.where(t <= 1.0, 1.5 * t**3 - 2.5 * t**2 + 1.0,
                 np.where(t < 2.0, -0.5 * t**3 + 2.5 * t**2 - 4.0 * t + 2.0, 0.0))
    return w


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) resampling operator along one axis, edge clamped."""
    key = (n_in, n_out)
    cached = _RESIZE_CACHE.get(key)
    if cached is not None:
        return cached
    m = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for yo in range(n_out):
        src = (yo + 0.5) * ratio - 0.5
        base = int(np.floor(src))
        for tap in range(base - 1, base + 3):
            w = float(_cubic_weight(np.float64(src - tap)))
            if w != 0.0:
                m[yo, min(max(tap, 0), n_in - 1)] += w
    _RESIZE_CACHE[key] = m
    return m


def resize_dims(shape: tuple, scale: float) -> tuple:
    h, w = shape[0], shape[1]
    return max(1, round(h * scale)), max(1, round(w * scale))


def _apply_separable(a: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    t = np.tensordot(mh, a, axes=(1, 0))   # (ho, w, c)
    t = np.tensordot(mw, t, axes=(1, 1))   # (wo, ho, c)
    return np.ascontiguousarray(t.transpose(1, 0, 2))


def bicubic_resize(x, scale: float) -> Tensor:
    """Separable bicubic resampling by a positive scale factor.

    Uses the Keys kernel (a = -0.5) with edge clamping; a constant image maps
    to the same constant for any scale.  Differentiable with respect to the
    input only (the resampling weights are fixed).
    """
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"bicubic_resize input must be (H,W,C), got {x.data.shape}")
    if scale <= 0:
        raise ShapeError("scale must be positive")
    h, w, _ = x.data.shape
    ho, wo = resize_dims(x.data.shape, scale)
    mh = _resize_matrix(h, ho).astype(x.data.dtype)
    mw = _resize_matrix(w, wo).astype(x.data.dtype)
    out = _apply_separable(x.data, mh, mw)

    def backward(g):
        return ((x, _apply_separable(g, mh.T, mw.T)),)

    return _make(out, (x,), backward)


def roll2d(x, shift: int) -> Tensor:
    """Circular shift by ``shift`` pixels along both spatial axes."""
    x = as_tensor(x)
    out = np.roll(x.data, (shift, shift), axis=(0, 1))

    def backward(g):
        return ((x, np.roll(g, (-shift, -shift), axis=(0, 1))),)

    return _make(out, (x,), backward)

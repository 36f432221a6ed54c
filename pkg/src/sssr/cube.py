"""Hyperspectral cubes, the acquisition simulator, and the HSC container.

A cube is a dense (H, W, C) float32 array with values in [0, 1] and optional
per-band wavelengths.  The simulator implements the standard observation
model: spatial degradation is a normalized low-pass blur followed by
s-decimation (top-left phase) plus optional Gaussian noise; spectral
degradation is a per-pixel linear band integration with a row-normalized
response matrix.  Both are linear (noise-free) and commute.

HSC container layout (little-endian):
  magic "HSCB" | version u32=1 | H u32 | W u32 | C u32 | flags u32
  [C float64 wavelengths when flags bit0]  | H*W*C float32, row-major H,W,C
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HSCB"
VERSION = 1


class FormatError(ValueError):
    """Malformed HSC payload or header."""


class IngestionError(ValueError):
    """Inconsistent source imagery during import."""


@dataclass
class ImageCube:
    """Dense image cube; values are clamped to [0,1] at construction."""

    data: np.ndarray
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise FormatError(f"cube must be (H,W,C), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise FormatError("cube contains non-finite values")
        self.data = np.clip(arr, 0.0, 1.0)
        if self.wavelengths is not None:
            wl = np.asarray(self.wavelengths, dtype=np.float64)
            if wl.shape != (arr.shape[2],):
                raise FormatError("wavelength count must match band count")
            if not (np.diff(wl) > 0).all():
                raise FormatError("wavelengths must be strictly increasing")
            self.wavelengths = wl

    @property
    def shape(self):
        return self.data.shape


@dataclass
class DegradationSpec:
    """Acquisition model: blur + s-decimation, band integration, noise."""

    sampling_factor: int
    blur_kernel: np.ndarray
    spectral_response: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.blur_kernel = np.asarray(self.blur_kernel, dtype=np.float64)
        total = self.blur_kernel.sum()
        if not np.isclose(total, 1.0):
            if total <= 0:
                raise ValueError("blur kernel must have positive sum")
            self.blur_kernel = self.blur_kernel / total
        r = np.asarray(self.spectral_response, dtype=np.float64)
        if (r < 0).any():
            raise ValueError("spectral response must be non-negative")
        rows = r.sum(axis=1, keepdims=True)
        if (rows <= 0).any():
            raise ValueError("spectral response has an empty row")
        self.spectral_response = r / rows
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def gaussian_blur_kernel(std: float, support: int) -> np.ndarray:
    """Normalized 2-D Gaussian on a square support (odd side)."""
    half = support // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-0.5 * (ax / max(std, 1e-12)) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def balanced_response(c: int, C: int, iters: int = 200) -> np.ndarray:
    """Overlapping Gaussian band profiles balanced so rows sum to 1 and every
    column sums to c/C (Sinkhorn scaling).

    Column balance makes band integration preserve the global mean of any
    cube, which row normalization alone does not guarantee.
    """
    centers = np.linspace(0, C - 1, c)
    width = max(1.0, C / (1.5 * c))
    bands = np.arange(C, dtype=np.float64)
    r = np.exp(-0.5 * ((bands[None, :] - centers[:, None]) / width) ** 2) + 1e-3
    col_target = c / C
    for _ in range(iters):
        r /= r.sum(axis=1, keepdims=True)
        r *= col_target / r.sum(axis=0, keepdims=True)
    return r / r.sum(axis=1, keepdims=True)


def default_spec(s: int, C: int, c: int, noise_sigma: float = 0.0,
                 blur_std: float | None = None,
                 blur_support: int | None = None) -> DegradationSpec:
    """Gaussian blur matched to the decimation rate, balanced band response."""
    std = blur_std if blur_std is not None else s / 2.0
    support = blur_support if blur_support is not None else 2 * s + 1
    return DegradationSpec(
        sampling_factor=s,
        blur_kernel=gaussian_blur_kernel(std, support),
        spectral_response=balanced_response(c, C),
        noise_sigma=noise_sigma,
    )


# -- container i/o ------------------------------------------------------------


def save_hsc(cube: ImageCube, path):
    path = Path(path)
    flags = 1 if cube.wavelengths is not None else 0
    h, w, ch = cube.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIII", VERSION, h, w, ch, flags))
        if cube.wavelengths is not None:
            fh.write(np.ascontiguousarray(cube.wavelengths, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def load_hsc(path) -> ImageCube:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic")
    if len(raw) < 24:
        raise FormatError(f"{path}: truncated header")
    version, h, w, ch, flags = struct.unpack("<IIIII", raw[4:24])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    count = h * w * ch
    if h == 0 or w == 0 or ch == 0 or count > 2**31:
        raise FormatError(f"{path}: dimension overflow {h}x{w}x{ch}")
    offset = 24
    wavelengths = None
    if flags & 1:
        need = offset + 8 * ch
        if len(raw) < need:
            raise FormatError(f"{path}: truncated payload")
        wavelengths = np.frombuffer(raw[offset:need], dtype="<f8").copy()
        offset = need
    need = offset + 4 * count
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload")
    data = np.frombuffer(raw[offset:need], dtype="<f4").reshape(h, w, ch).copy()
    return ImageCube(data=data, wavelengths=wavelengths)


def import_band_directory(path, bit_depth: int = 16) -> ImageCube:
    """Stack equally sized single-channel 16-bit grayscale images as bands.

    Files are taken in lexicographic order; values are scaled by 1/65535.
    """
    from PIL import Image

    if bit_depth != 16:
        raise IngestionError(f"unsupported bit depth {bit_depth}")
    files = sorted(p for p in Path(path).iterdir() if p.is_file())
    if not files:
        raise IngestionError(f"{path}: no band files found")
    bands = []
    for f in files:
        arr = np.asarray(Image.open(f))
        if arr.ndim != 2:
            raise IngestionError(f"{f}: expected a single-channel image")
        bands.append(arr.astype(np.float64))
    shapes = {b.shape for b in bands}
    if len(shapes) != 1:
        raise IngestionError(f"{path}: band dimensions differ: {sorted(shapes)}")
    stack = np.stack(bands, axis=2) / 65535.0
    return ImageCube(data=stack)


# -- degradation ops -----------------------------------------------------------


def _correlate2d(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Same-size centered correlation with zero padding, per 2-D band."""
    k = kern.shape[0]
    pad = k // 2
    hp = np.pad(img, pad)
    s0, s1 = hp.strides
    win = np.lib.stride_tricks.as_strided(
        hp, shape=(img.shape[0], img.shape[1], k, k), strides=(s0, s1, s0, s1),
        writeable=False)
    return np.tensordot(win, kern, axes=([2, 3], [0, 1]))


def spectral_degrade(cube: ImageCube, response: np.ndarray) -> ImageCube:
    """Per-pixel linear band integration, output clamped to [0,1]."""
    r = np.asarray(response, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] != cube.data.shape[2]:
        raise FormatError(
            f"response columns {r.shape} do not match band count {cube.data.shape[2]}")
    out = cube.data.astype(np.float64) @ r.T
    return ImageCube(data=np.clip(out, 0.0, 1.0))


def spatial_degrade(cube: ImageCube, spec: DegradationSpec,
                    rng: np.random.Generator | None = None) -> ImageCube:
    """Blur each band, decimate at offset 0, add noise, clamp."""
    s = spec.sampling_factor
    h, w, ch = cube.data.shape
    if h % s or w % s:
        raise FormatError(f"sampling factor {s} does not divide {h}x{w}")
    out = np.empty((h // s, w // s, ch), dtype=np.float64)
    data = cube.data.astype(np.float64)
    for b in range(ch):
        out[:, :, b] = _correlate2d(data[:, :, b], spec.blur_kernel)[::s, ::s]
    if spec.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an explicit rng")
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
    return ImageCube(data=np.clip(out, 0.0, 1.0))


def make_quadruple(reference: ImageCube, spec: DegradationSpec,
                   rng: np.random.Generator | None = None):
    """Derive the training quadruple (f, F, g, G) from a reference cube.

    F integrates bands, g decimates space, and f decimates F with the same
    spatial model.  The two degradations commute in the noise-free case, so
    producing f from F is equivalent to band-integrating g.
    """
    big_ms = spectral_degrade(reference, spec.spectral_response)
    low_hs = spatial_degrade(reference, spec, rng=rng)
    low_ms = spatial_degrade(big_ms, spec, rng=rng)
    return low_ms, big_ms, low_hs, reference

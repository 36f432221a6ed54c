"""Unfolded spectral super-resolution with cluster-routed band operators.

Pixels are partitioned into M clusters once per forward pass (from the
multispectral input) and every spectral lift / band-integration operator is a
two-layer MLP with cluster-specific weights.  Three clustering modes:

  learned  - conv stack producing per-pixel logits, softmax, hard argmax
  kmeans   - nearest centroid, centroids fitted offline on training pixels
  none     - a single shared MLP (M forced to 1)

The hard assignment is not differentiated; the assigner's convolutions sit in
the graph but receive zero gradient, which is the documented behavior of this
routing scheme.  The per-pixel probabilities are kept for inspection only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Layer, Linear, ProxNet, param
from .tensor import Tensor

CLUSTER_MODES = ("learned", "kmeans", "none")


@dataclass
class ClusterMap:
    """Per-pixel routing: hard indices plus the probabilities behind them."""

    indices: np.ndarray       # (h, w) int32 in [0, M)
    probabilities: np.ndarray  # (h, w, M), rows sum to 1

    @property
    def clusters(self) -> int:
        return self.probabilities.shape[2]

    def member_rows(self) -> list:
        """Raster-order flat pixel indices per cluster."""
        flat = self.indices.ravel()
        return [np.flatnonzero(flat == m) for m in range(self.clusters)]


class ClusterAssigner(Layer):
    """Two 3x3 convs (c -> hidden -> M) producing per-pixel cluster logits."""

    def __init__(self, channels: int, clusters: int, rng: np.random.Generator,
                 hidden: int = 16):
        self.conv1 = Conv2d(channels, hidden, 3, rng=rng)
        self.conv2 = Conv2d(hidden, clusters, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(T.relu(self.conv1(x)))


def assign_clusters(f: Tensor, assigner: ClusterAssigner) -> ClusterMap:
    """Softmax over the cluster dimension, then argmax with lowest-index ties."""
    with T.no_grad():
        probs = T.softmax(assigner(f), axis=2).data
    indices = probs.argmax(axis=2).astype(np.int32)   # argmax takes first max
    return ClusterMap(indices=indices, probabilities=probs)


def trivial_map(h: int, w: int) -> ClusterMap:
    return ClusterMap(indices=np.zeros((h, w), np.int32),
                      probabilities=np.ones((h, w, 1)))


# -- k-means -------------------------------------------------------------------


def kmeans_fit(pixels: np.ndarray, clusters: int, iters: int = 25,
               seed: int = 0) -> np.ndarray:
    """Lloyd's algorithm with greedy distance-weighted seeding.

    Empty clusters are reseeded from the point farthest from its centroid.
    Deterministic for a given seed.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    n = pixels.shape[0]
    if n == 0:
        raise ValueError("k-means needs a non-empty sample")
    if clusters > n:
        raise ValueError(f"M={clusters} exceeds sample size {n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((clusters, pixels.shape[1]))
    centroids[0] = pixels[rng.integers(n)]
    d2 = ((pixels - centroids[0]) ** 2).sum(axis=1)
    for m in range(1, clusters):
        total = d2.sum()
        if total <= 0:
            centroids[m] = pixels[rng.integers(n)]
        else:
            centroids[m] = pixels[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((pixels - centroids[m]) ** 2).sum(axis=1))

    for _ in range(iters):
        dist = ((pixels[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = dist.argmin(axis=1)
        for m in range(clusters):
            members = pixels[labels == m]
            if len(members) == 0:
                worst = int(dist[np.arange(n), labels].argmax())
                centroids[m] = pixels[worst]
            else:
                centroids[m] = members.mean(axis=0)
    return centroids


def kmeans_assign(f: np.ndarray, centroids: np.ndarray) -> ClusterMap:
    """Nearest-centroid assignment (Euclidean, lowest-index ties)."""
    h, w, c = f.shape
    flat = f.reshape(-1, c).astype(np.float64)
    dist = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = dist.argmin(axis=1).astype(np.int32)
    m = centroids.shape[0]
    probs = np.zeros((h * w, m))
    probs[np.arange(h * w), labels] = 1.0
    return ClusterMap(indices=labels.reshape(h, w),
                      probabilities=probs.reshape(h, w, m))


# -- cluster split / recon -------------------------------------------------------


def cluster_split(x: Tensor, cmap: ClusterMap) -> list:
    """Per-cluster pixel matrices (n_m, d) in raster order."""
    h, w = cmap.indices.shape
    if x.shape[0] != h or x.shape[1] != w:
        raise T.ShapeError(f"cluster map {h}x{w} does not match image {x.shape[:2]}")
    flat = T.reshape(x, (h * w, x.shape[2]))
    return [T.gather_rows(flat, rows) for rows in cmap.member_rows()]


def cluster_recon(parts: list, cmap: ClusterMap) -> Tensor:
    """Exact inverse of ``cluster_split``: place rows back by raster order."""
    h, w = cmap.indices.shape
    rows = cmap.member_rows()
    sizes = [len(r) for r in rows]
    if sizes != [p.shape[0] for p in parts]:
        raise T.ShapeError(
            f"part sizes {[p.shape[0] for p in parts]} inconsistent with map {sizes}")
    perm = np.concatenate(rows) if rows else np.empty(0, np.int64)
    inverse = np.empty(h * w, dtype=np.int64)
    inverse[perm] = np.arange(h * w)
    stacked = T.concat(parts, axis=0)
    return T.reshape(T.gather_rows(stacked, inverse), (h, w, parts[0].shape[1]))


class ClusterMlp(Layer):
    """Two affine layers with a ReLU between, applied per pixel."""

    def __init__(self, din: int, dout: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(din, hidden, rng=rng)
        self.fc2 = Linear(hidden, dout, rng=rng)

    def __call__(self, rows: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(rows)))


def apply_cluster_mlps(x: Tensor, cmap: ClusterMap, mlps: list) -> Tensor:
    """Route each cluster's pixels through its own MLP and reassemble."""
    if len(mlps) != cmap.clusters:
        raise T.ShapeError(f"{len(mlps)} MLPs for {cmap.clusters} clusters")
    parts = cluster_split(x, cmap)
    return cluster_recon([mlp(part) for mlp, part in zip(mlps, parts)], cmap)


# -- the unfolded solver ---------------------------------------------------------


class SsrStage(Layer):
    def __init__(self, c_in: int, c_out: int, clusters: int, hidden: int,
                 features: int, blocks: int, reduction: int,
                 rng: np.random.Generator, tau_init: float = 0.1):
        self.log_tau = param(np.log(tau_init))
        self.up_mlps = [ClusterMlp(c_in, c_out, hidden, rng) for _ in range(clusters)]
        self.down_mlps = [ClusterMlp(c_out, c_in, hidden, rng) for _ in range(clusters)]
        self.prox = ProxNet(c_out, features, blocks, rng, block_kind="rcab",
                            reduction=reduction)

    def tau(self) -> Tensor:
        return T.exp(self.log_tau)


class SpectralSolver(Layer):
    """Maps (h,w,c) multispectral input to an (h,w,C) hyperspectral estimate."""

    def __init__(self, c_in: int, c_out: int, stages: int, clusters: int,
                 features: int, blocks: int, rng: np.random.Generator,
                 mode: str = "learned", reduction: int = 4,
                 mlp_hidden: int | None = None):
        if mode not in CLUSTER_MODES:
            raise ValueError(f"unknown cluster mode: {mode}")
        if mode == "none":
            clusters = 1
        self.mode = mode
        self.clusters = clusters
        hidden = mlp_hidden if mlp_hidden is not None else 2 * max(c_in, c_out)
        self.assigner = (ClusterAssigner(c_in, clusters, rng)
                         if mode == "learned" else None)
        # buffer, fitted offline; saved in checkpoints but never optimized
        self.centroids = (param(np.zeros((clusters, c_in)), trainable=False)
                          if mode == "kmeans" else None)
        self.init_up = [ClusterMlp(c_in, c_out, hidden, rng) for _ in range(clusters)]
        self.stages = [SsrStage(c_in, c_out, clusters, hidden, features, blocks,
                                reduction, rng) for _ in range(stages)]

    def fit_clusters(self, pixels: np.ndarray, iters: int = 25, seed: int = 0):
        if self.mode != "kmeans":
            raise ValueError("fit_clusters only applies to kmeans mode")
        self.centroids.data = kmeans_fit(pixels, self.clusters, iters=iters,
                                         seed=seed).astype(np.float32)

    def make_map(self, f: Tensor) -> ClusterMap:
        """Cluster routing is computed once from the input and shared by all
        stages of the forward pass."""
        if self.mode == "learned":
            return assign_clusters(f, self.assigner)
        if self.mode == "kmeans":
            return kmeans_assign(f.data, self.centroids.data.astype(np.float64))
        return trivial_map(f.shape[0], f.shape[1])

    def unfold(self, f: Tensor, cmap: ClusterMap | None = None):
        if cmap is None:
            cmap = self.make_map(f)
        u = apply_cluster_mlps(f, cmap, self.init_up)
        per_stage = []
        for stage in self.stages:
            residual = T.sub(apply_cluster_mlps(u, cmap, stage.down_mlps), f)
            direction = apply_cluster_mlps(residual, cmap, stage.up_mlps)
            u = stage.prox(T.sub(u, T.mul(stage.tau(), direction)))
            per_stage.append(u)
        return u, per_stage

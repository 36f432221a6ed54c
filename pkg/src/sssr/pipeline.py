"""Full reconstruction pipeline: spatial, spectral, fusion, post-processing.

The three solvers run as one graph (spatial and spectral branches from the
same input, fusion on top); the attention post-processor is an optional final
residual stage trained separately.  RNG namespaces are fixed so a seed fully
determines initialization: (seed, 1) model weights, (seed, 2) phase-1 data
order, (seed, 3) k-means sampling, (seed, 4) phase-2 data order.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttnConfig, PostProcessor
from .config import RunConfig
from .fusion import FusionSolver
from .nn import Layer
from .spatial import SpatialSolver
from .spectral import SpectralSolver
from .tensor import Tensor


class Pipeline(Layer):
    def __init__(self, config: RunConfig, rng: np.random.Generator):
        d, m = config.dims, config.model
        self.sr = SpatialSolver(d.c, d.s, m.stages, m.features, m.resblocks, rng,
                                steps=m.sr_steps,
                                back_projection=(m.sr_upsampler == "bp"))
        self.ssr = SpectralSolver(d.c, d.C, m.stages, m.clusters, m.features,
                                  m.resblocks, rng, mode=m.cluster_mode,
                                  reduction=m.rcab_reduction,
                                  mlp_hidden=m.mlp_hidden)
        self.fus = FusionSolver(d.c, d.C, d.s, m.stages, m.features, m.resblocks,
                                rng)
        attn = AttnConfig(window=m.attn.window, patch=m.attn.patch,
                          embed_dim=m.attn.embed_dim, heads=m.attn.heads,
                          topk_ratio=m.attn.topk_ratio)
        self.post = PostProcessor(d.C, attn, rng)

    def forward(self, f, postprocess: bool = False) -> dict:
        """Run the full graph on one low-resolution multispectral image.

        Returns the final tensors and every per-stage intermediate (the
        phase-1 loss penalizes all of them).
        """
        ft = f if isinstance(f, Tensor) else Tensor(np.asarray(f, np.float32))
        u_sr, sr_stages = self.sr.unfold(ft)
        u_ssr, ssr_stages = self.ssr.unfold(ft)
        u_fus, fus_stages = self.fus.unfold(u_sr, u_ssr)
        out = self.post(u_fus) if postprocess else u_fus
        return {
            "u_sr": u_sr, "sr_stages": sr_stages,
            "u_ssr": u_ssr, "ssr_stages": ssr_stages,
            "u_fus": u_fus, "fus_stages": fus_stages,
            "output": out,
        }

    def reconstruct(self, f: np.ndarray, postprocess: bool = True) -> np.ndarray:
        """Inference path: fused cube clipped to the reference dynamic range."""
        with T.no_grad():
            out = self.forward(f, postprocess=postprocess)["output"]
        return np.clip(out.data, 0.0, 1.0)


def build_pipeline(config: RunConfig, seed: int | None = None) -> Pipeline:
    seed = config.training.seed if seed is None else seed
    return Pipeline(config, np.random.default_rng([seed, 1]))


def parameter_signature(pipe: Pipeline, config: RunConfig) -> str:
    """One-line fingerprint logged at startup: per-module trainable parameter
    counts plus the configuration axes that distinguish ablation variants."""
    m = config.model
    t = config.training
    counts = {name: getattr(pipe, name).param_count() for name in
              ("sr", "ssr", "fus", "post")}
    counts["total"] = sum(counts.values())
    params = ",".join(f"{k}={v}" for k, v in counts.items())
    schedule = "|".join(
        f"{name}({','.join(f'{v:g}' for v in triple)})"
        for name, triple in (("sr", t.alpha_sr), ("ssr", t.alpha_ssr),
                             ("fus", t.alpha_fus)))
    return (f"params[{params}] upsampler={m.sr_upsampler}/{m.sr_steps} "
            f"clusters={m.cluster_mode}:{pipe.ssr.clusters} schedule={schedule}")

"""Run configuration: JSON file plus CLI flag overrides (flags win).

Defaults are the desk-scale setup (32x32 scenes, 8 bands from 3, factor 2,
two stages, 16 features, 3 clusters).  The larger working points reported for
this architecture (4 stages, 128 features, 10 clusters, 1000+100 epochs,
learning rate 1e-4) are all reachable through the same keys.  Unknown keys
are rejected everywhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _from_mapping(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return payload


@dataclass
class Dims:
    H: int = 32
    W: int = 32
    C: int = 8
    c: int = 3
    s: int = 2

    def validate(self):
        for name in ("H", "W", "C", "c", "s"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dims.{name} must be positive")
        if self.H % self.s or self.W % self.s:
            raise ConfigError(f"sampling factor {self.s} must divide {self.H}x{self.W}")
        if self.c > self.C:
            raise ConfigError("multispectral band count c cannot exceed C")


@dataclass
class AttnSettings:
    window: int = 11
    patch: int = 11
    embed_dim: int = 8
    heads: int = 4
    topk_ratio: float = 0.1

    def validate(self):
        if self.window % 2 == 0 or self.patch % 2 == 0:
            raise ConfigError("attention window and patch sizes must be odd")
        if not 0 < self.topk_ratio <= 1:
            raise ConfigError("topk_ratio must lie in (0, 1]")
        if self.embed_dim < 1 or self.heads < 1:
            raise ConfigError("embed_dim and heads must be positive")


@dataclass
class ModelSettings:
    stages: int = 2
    features: int = 16
    clusters: int = 3
    cluster_mode: str = "learned"
    resblocks: int = 3
    rcab_reduction: int = 4
    mlp_hidden: int | None = None
    sr_upsampler: str = "bp"
    sr_steps: str = "progressive"
    attn: AttnSettings = field(default_factory=AttnSettings)

    def validate(self):
        if self.stages < 1:
            raise ConfigError("model.stages must be >= 1")
        if self.features < 1 or self.clusters < 1 or self.resblocks < 0:
            raise ConfigError("model sizes must be positive")
        if self.cluster_mode not in ("learned", "kmeans", "none"):
            raise ConfigError(f"unknown cluster_mode {self.cluster_mode!r}")
        if self.sr_upsampler not in ("forward", "bp"):
            raise ConfigError(f"unknown sr_upsampler {self.sr_upsampler!r}")
        if self.sr_steps not in ("single", "progressive"):
            raise ConfigError(f"unknown sr_steps {self.sr_steps!r}")
        self.attn.validate()


@dataclass
class TrainingSettings:
    phase1_epochs: int = 200
    phase2_epochs: int = 15
    learning_rate: float = 1e-4
    alpha_sr: tuple = (2.0, 0.5, 0.0)
    alpha_ssr: tuple = (1.0, 1.0, 0.5)
    alpha_fus: tuple = (0.5, 1.0, 1.0)
    alpha_change_points: tuple = (300, 600)
    kmeans_fraction: float = 0.25
    kmeans_iters: int = 25
    seed: int = 0

    def validate(self):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("alpha_sr", "alpha_ssr", "alpha_fus"):
            triple = getattr(self, name)
            if len(triple) != 3:
                raise ConfigError(f"training.{name} must have three values")
            setattr(self, name, tuple(float(v) for v in triple))
        if len(self.alpha_change_points) != 2:
            raise ConfigError("alpha_change_points must have two epochs")
        self.alpha_change_points = tuple(int(v) for v in self.alpha_change_points)
        if not 0 < self.kmeans_fraction <= 1:
            raise ConfigError("kmeans_fraction must lie in (0, 1]")


@dataclass
class DataSettings:
    count: int = 10
    split: tuple = (8, 1, 1)
    noise_sigma: float = 0.0
    endmembers: int = 6
    blur_std: float | None = None
    blur_support: int | None = None

    def validate(self):
        if self.count < 1:
            raise ConfigError("data.count must be positive")
        self.split = tuple(int(v) for v in self.split)
        if len(self.split) != 3 or sum(self.split) != self.count:
            raise ConfigError(f"data.split {self.split} must sum to count {self.count}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


@dataclass
class PathSettings:
    dataset: str = "data"
    checkpoints: str = "checkpoints"
    reports: str = "reports"


@dataclass
class RunConfig:
    dims: Dims = field(default_factory=Dims)
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    data: DataSettings = field(default_factory=DataSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def validate(self) -> "RunConfig":
        self.dims.validate()
        self.model.validate()
        self.training.validate()
        self.data.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(payload: dict) -> "RunConfig":
        payload = _from_mapping(RunConfig, dict(payload), "config")
        cfg = RunConfig()
        if "dims" in payload:
            cfg.dims = Dims(**_from_mapping(Dims, payload["dims"], "dims"))
        if "model" in payload:
            model = dict(_from_mapping(ModelSettings, payload["model"], "model"))
            if "attn" in model:
                model["attn"] = AttnSettings(
                    **_from_mapping(AttnSettings, model["attn"], "model.attn"))
            cfg.model = ModelSettings(**model)
        if "training" in payload:
            cfg.training = TrainingSettings(
                **_from_mapping(TrainingSettings, payload["training"], "training"))
        if "data" in payload:
            cfg.data = DataSettings(**_from_mapping(DataSettings, payload["data"], "data"))
        if "paths" in payload:
            cfg.paths = PathSettings(
                **_from_mapping(PathSettings, payload["paths"], "paths"))
        return cfg.validate()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (optional) and apply dotted-path overrides, which
    take precedence over file content."""
    payload = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for dotted, value in (overrides or {}).items():
        node = payload
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted}: {part} is not an object")
        node[leaf] = value
    return RunConfig.from_dict(payload)

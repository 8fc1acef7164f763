"""Training configuration, presets and JSON round-tripping."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .encodings import HashGridConfig
from .fields import FieldConfig
from .losses import LossWeights


@dataclass
class TrainConfig:
    stage: int = 1
    iterations: int = 50000
    rays: int = 1024
    # kept for bookkeeping; the effective batch is ``rays`` from one view per iteration
    batch_size: int = 32
    lr: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    n_coarse: int = 64
    n_fine: int = 64
    supervision: str = "albedo"  # stage-1 colour reference: albedo | image
    transient: bool = True
    rgb_weight_mode: str = "input_override"
    eikonal_points: int = 256
    mask_dilation: int = 5
    background_fraction: float = 0.1
    semantic: bool = True
    semantic_every: int = 10
    semantic_views: int = 4
    semantic_resolution: int = 64
    semantic_coarse: int = 64
    semantic_fine: int = 64
    semantic_extractor: str = "builtin"
    semantic_dim: int = 128
    semantic_seed: int = 0
    checkpoint_every: int = 1000
    seed: int = 0
    field: FieldConfig = field(default_factory=FieldConfig)
    checkpoint_in: str | None = None
    checkpoint_out: str | None = None
    eval_views: int = 60
    eval_resolution: int = 64
    eval_coarse: int = 64
    eval_fine: int = 64
    mesh_resolution: int = 128

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        for name in ("iterations", "rays", "batch_size", "n_coarse", "semantic_every", "semantic_views",
                     "eikonal_points", "checkpoint_every", "eval_views"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_fine < 0:
            raise ValueError("n_fine must be >= 0")
        if self.supervision not in ("albedo", "image"):
            raise ValueError(f"supervision must be 'albedo' or 'image', got {self.supervision!r}")
        if not 0.0 <= self.background_fraction <= 1.0:
            raise ValueError("background_fraction must lie in [0, 1]")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _build(cls, d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Read a JSON config; keys present override ``base`` (defaults when None)."""
        doc = json.loads(Path(path).read_text())
        merged = _merge((base or cls()).to_dict(), doc)
        return cls.from_dict(merged)


_NESTED = {
    (TrainConfig, "weights"): LossWeights,
    (TrainConfig, "field"): FieldConfig,
    (FieldConfig, "hash"): HashGridConfig,
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise KeyError(f"unknown config key {k!r}")
        out[k] = _merge(base[k], v) if isinstance(base[k], dict) and isinstance(v, dict) else v
    return out


def _build(cls, d: dict):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        sub = _NESTED.get((cls, k))
        if sub is not None and isinstance(v, dict):
            v = _build(sub, v)
        elif isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    return cls(**kw)


def desk_field_config() -> FieldConfig:
    """Small networks sized for single-machine CPU training."""
    return FieldConfig(
        hash=HashGridConfig(table_size=2**14),
        sdf_hidden=(64, 64),
        sdf_skips=(),
        feature_dim=32,
        transient_sdf_hidden=(32,),
        albedo_hidden=(64, 64),
        texture_hidden=(64, 64),
        transient_texture_hidden=(64, 64),
    )


def large_preset(**kw) -> TrainConfig:
    return TrainConfig(**kw)


def desk_preset(**kw) -> TrainConfig:
    base = dict(
        iterations=3000,
        rays=64,
        n_coarse=32,
        n_fine=32,
        semantic_resolution=16,
        semantic_coarse=8,
        semantic_fine=8,
        eikonal_points=128,
        checkpoint_every=500,
        field=desk_field_config(),
        eval_resolution=32,
        eval_coarse=32,
        eval_fine=32,
    )
    base.update(kw)
    return TrainConfig(**base)

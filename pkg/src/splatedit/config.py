"""Engine configuration: rasterizer knobs, optimizer schedule, edit loop.

Configs load from TOML or JSON documents; every field has a default so a
partial document is enough.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

try:
    import tomllib  # py>=3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .errors import ValidationError


@dataclass
class RenderConfig:
    tile_size: int = 16
    # alpha handling in the blend: clip cap, skip floor, stop threshold
    alpha_clip: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    # screen-space footprint: coverage box half-width in sigma units
    radius_mult: float = 3.0
    # anti-alias floor added to the 2D covariance diagonal (px^2)
    aa_floor: float = 0.3
    background: tuple = (0.0, 0.0, 0.0)

    def validate(self):
        if self.tile_size < 1:
            raise ValidationError("tile_size must be >= 1")
        if not (0.0 < self.alpha_clip <= 1.0):
            raise ValidationError("alpha_clip must be in (0, 1]")
        if self.alpha_min < 0 or self.transmittance_min <= 0:
            raise ValidationError("alpha_min/transmittance_min out of range")
        return self


@dataclass
class OptimizerConfig:
    # GS-baseline learning-rate split; position lr scales with scene extent
    lr_position: float = 1.6e-4
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15


@dataclass
class ScheduleConfig:
    # anchor-loss strength per generation and its growth at densification
    lambda_gen0: float = 1.0
    lambda_new: float = 0.01
    growth: float = 2.0
    # per-property weights for the total anchor loss
    lambda_position: float = 1.0
    lambda_scale: float = 1.0
    lambda_rotation: float = 1.0
    lambda_opacity: float = 0.5
    lambda_sh: float = 0.1


@dataclass
class DensifyConfig:
    interval: int = 100
    top_percent: float = 5.0
    prune_opacity: float = 5e-3
    # clone-vs-split decision: clone when max scale < percent_dense * extent
    percent_dense: float = 0.01
    split_scale_divisor: float = 1.6


@dataclass
class EditConfig:
    steps: int = 500
    seed: int = 0
    restrict_label: int | None = None
    isolate_render: bool = False
    render: RenderConfig = field(default_factory=RenderConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    densify: DensifyConfig = field(default_factory=DensifyConfig)


_SECTIONS = {
    "render": RenderConfig,
    "optimizer": OptimizerConfig,
    "schedule": ScheduleConfig,
    "densify": DensifyConfig,
}


def _build(cls, obj: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(obj) - known
    if bad:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    if cls is RenderConfig and "background" in obj:
        obj = dict(obj, background=tuple(obj["background"]))
    return cls(**obj)


def edit_config_from_dict(doc: dict) -> EditConfig:
    doc = dict(doc)
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in doc:
            kwargs[key] = _build(cls, doc.pop(key))
    top = _build(EditConfig, {k: v for k, v in doc.items()})
    for key, val in kwargs.items():
        setattr(top, key, val)
    return top


def load_edit_config(path: str) -> EditConfig:
    """Load an EditConfig from a .toml or .json document."""
    if path.endswith(".toml"):
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    else:
        with open(path) as f:
            doc = json.load(f)
    return edit_config_from_dict(doc)


def edit_config_to_dict(cfg: EditConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["render"]["background"] = list(out["render"]["background"])
    return out

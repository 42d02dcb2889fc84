"""Run and model configuration with schema validation and env overrides.

Precedence: config file < ``DOCMSU_*`` environment variables < CLI flags.
Nested keys use double underscores in the environment, e.g.
``DOCMSU_MODEL__L=4`` or ``DOCMSU_SPLIT__SEED=7``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .records import ValidationError

# (stage depths, base channel width) per named preset
PRESETS: dict[str, tuple[tuple[int, int, int, int], int]] = {
    "tiny": ((2, 2, 6, 2), 96),
    "small": ((2, 2, 18, 2), 96),
    "base": ((2, 2, 18, 2), 128),
}


@dataclass
class ModelConfig:
    """Architecture and preprocessing knobs for one model instance."""

    preset: str = "tiny"
    L: int = 8                      # square grid side for documents and windows
    d: int = 96                     # fused channel width / backbone base width
    d_lm: int = 32                  # text backend embedding width (768 pretrained)
    conv_depth: int = 3             # resolution-preserving conv layers
    stage_depths: tuple[int, int, int, int] = (2, 2, 6, 2)
    num_heads: tuple[int, int, int, int] | None = None
    head_width: int = 64            # box-head stem channels
    backend: str = "hash"           # "hash" | "pretrained"
    image_size: int = 224
    modality: str = "both"          # "both" | "text" | "image"
    seed: int = 0

    def __post_init__(self):
        self.stage_depths = tuple(int(x) for x in self.stage_depths)
        if self.preset in PRESETS:
            depths, width = PRESETS[self.preset]
            self.stage_depths = depths
            self.d = width
        elif self.preset != "custom":
            raise ValidationError(
                f"unknown preset {self.preset!r}; use {sorted(PRESETS)} or 'custom'"
            )
        if len(self.stage_depths) != 4 or any(x < 1 for x in self.stage_depths):
            raise ValidationError(f"stage_depths must be 4 positive ints, got {self.stage_depths}")
        if self.image_size % 4 != 0:
            raise ValidationError("image_size must be divisible by the 4x4 patch size")
        if self.L < 1 or self.d < 1:
            raise ValidationError("L and d must be >= 1")
        if self.backend not in ("hash", "pretrained"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if self.backend == "pretrained":
            self.d_lm = 768
        if self.modality not in ("both", "text", "image"):
            raise ValidationError(f"unknown modality {self.modality!r}")
        if self.num_heads is None:
            self.num_heads = tuple(max(1, (self.d * 2**s) // 32) for s in range(4))
        self.num_heads = tuple(int(h) for h in self.num_heads)
        for s, h in enumerate(self.num_heads):
            if (self.d * 2**s) % h != 0:
                raise ValidationError(
                    f"stage {s} width {self.d * 2**s} not divisible by {h} heads"
                )

    @property
    def stage_widths(self) -> tuple[int, int, int, int]:
        return tuple(self.d * 2**s for s in range(4))

    @property
    def patch_grid(self) -> int:
        return self.image_size // 4

    @classmethod
    def test_preset(cls, **overrides) -> "ModelConfig":
        """Tiny deterministic configuration for fast desk-scale runs."""
        base = dict(
            preset="custom",
            L=4,
            d=8,
            d_lm=16,
            conv_depth=1,
            stage_depths=(1, 1, 1, 1),
            head_width=8,
            image_size=32,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["stage_depths"] = list(self.stage_depths)
        out["num_heads"] = list(self.num_heads)
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "ModelConfig":
        # environment overrides arrive lowercased; "l" means the grid side L
        obj = {("L" if k == "l" else k): v for k, v in obj.items()}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown model config fields {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in obj.items()})


RUN_CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dataset": {"type": "string"},
        "images_root": {"type": ["string", "null"]},
        "out": {"type": "string"},
        "task": {"enum": ["detect", "localize"]},
        "strict_images": {"type": "boolean"},
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratios": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 3,
                    "maxItems": 3,
                },
                "seed": {"type": "integer"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"type": "string"},
                "L": {"type": "integer", "minimum": 1},
                "l": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "d_lm": {"type": "integer", "minimum": 1},
                "conv_depth": {"type": "integer", "minimum": 0},
                "stage_depths": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 4,
                    "maxItems": 4,
                },
                "num_heads": {
                    "type": ["array", "null"],
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 4,
                    "maxItems": 4,
                },
                "head_width": {"type": "integer", "minimum": 1},
                "backend": {"enum": ["hash", "pretrained"]},
                "image_size": {"type": "integer", "minimum": 4},
                "modality": {"enum": ["both", "text", "image"]},
                "seed": {"type": "integer"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 1},
                "max_steps": {"type": ["integer", "null"], "minimum": 1},
                "lr": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
            },
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "em_strict": {"type": "boolean"},
                "token_cutoff": {"type": "number"},
                "detect_cutoff": {"type": "number"},
                "f1_conf_threshold": {"type": "number"},
                "box_conf_threshold": {"type": "number"},
            },
        },
    },
}

ENV_PREFIX = "DOCMSU_"


@dataclass
class RunConfig:
    """Everything one CLI run needs, validated against the published schema."""

    dataset: str = ""
    images_root: str | None = None
    out: str = "runs/out"
    task: str = "detect"
    strict_images: bool = True
    split: dict = field(default_factory=lambda: {"ratios": [0.7, 0.2, 0.1], "seed": 0})
    model: dict = field(default_factory=dict)
    train: dict = field(
        default_factory=lambda: {
            "batch_size": 16,
            "epochs": 20,
            "max_steps": None,
            "lr": None,
            "weight_decay": 0.01,
        }
    )
    metrics: dict = field(
        default_factory=lambda: {
            "em_strict": False,
            "token_cutoff": 0.5,
            "detect_cutoff": 0.5,
            "f1_conf_threshold": 0.5,
            "box_conf_threshold": 0.5,
        }
    )

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(
        cls,
        path: str | Path | None = None,
        env: Mapping[str, str] | None = None,
        overrides: Mapping[str, Any] | None = None,
    ) -> "RunConfig":
        """Merge file, environment, and explicit overrides (in that order)."""
        merged: dict = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                file_obj = json.load(fh)
            _deep_update(merged, file_obj)
        _deep_update(merged, _env_overrides(env if env is not None else os.environ))
        if overrides:
            _deep_update(merged, dict(overrides))
        try:
            jsonschema.validate(merged, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ValidationError(f"invalid run config: {exc.message}") from exc
        cfg = cls()
        for key, value in merged.items():
            current = getattr(cfg, key)
            if isinstance(current, dict) and isinstance(value, dict):
                current.update(value)
            else:
                setattr(cfg, key, value)
        return cfg


def _deep_update(dst: dict, src: Mapping[str, Any]) -> None:
    for key, value in src.items():
        if isinstance(value, Mapping) and isinstance(dst.get(key), dict):
            _deep_update(dst[key], value)
        else:
            dst[key] = value


def _env_overrides(env: Mapping[str, str]) -> dict:
    out: dict = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX) :].split("__")]
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out

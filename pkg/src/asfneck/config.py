"""Neck configuration, its JSON schema, and (de)serialization.

A config file is a JSON object; every key is optional and missing keys take
the defaults below. Unknown keys are rejected. See ``SCHEMA`` for the full
document layout.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import jsonschema

from .errors import ConfigError

_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "NeckConfig",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "c3_width": {"type": "integer", "minimum": 4, "multipleOf": 4},
        "input_size": {"type": "integer", "minimum": 32, "multipleOf": 32},
        "seed": {"type": "integer", "minimum": 0},
        "bn_eps": {"type": "number", "exclusiveMinimum": 0},
        "ssff": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "channels": {"oneOf": [_POS_INT, {"type": "null"}]},
                "fuse3d_kernel": {
                    "type": "array",
                    "prefixItems": [{"const": 3}, {"type": "integer", "minimum": 1},
                                    {"type": "integer", "minimum": 1}],
                    "items": False,
                    "minItems": 3,
                },
                "reduce_p3": {"type": "boolean"},
            },
        },
        "tfe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"hybrid": {"enum": ["sum", "mean"]}},
        },
        "cpam": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": _POS_INT,
                "b": {"type": "integer", "minimum": 0},
                "pos_reduction": _POS_INT,
                "attention": {"type": "string", "minLength": 1},
            },
        },
        "soft_nms": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma_s": {"type": "number", "exclusiveMinimum": 0},
                "score_floor": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "per_class": {"type": "boolean"},
            },
        },
        "head": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_classes": _POS_INT,
                "proto_channels": _POS_INT,
                "proto_stride": {"enum": [4, 8]},
                "conf_thresh": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "max_candidates": _POS_INT,
                "max_det": _POS_INT,
                "anchor_scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "bypass": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "boolean"} for k in ("ssff", "tfe", "cpam")},
        },
        "junctions": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p4_merge": {"enum": ["tfe", "concat"]},
                "p3_merge": {"enum": ["tfe", "concat"]},
                "cpam_input1": {"enum": ["p3_merge", "backbone_p3"]},
                "bottom_up_from": {"enum": ["p3_merge", "n3"]},
            },
        },
    },
}


@dataclass(frozen=True)
class SsffConfig:
    channels: Optional[int] = None  # None: use c3_width
    fuse3d_kernel: Tuple[int, int, int] = (3, 1, 1)
    reduce_p3: bool = False


@dataclass(frozen=True)
class TfeConfig:
    hybrid: str = "sum"


@dataclass(frozen=True)
class CpamConfig:
    gamma: int = 2
    b: int = 1
    pos_reduction: int = 1
    attention: str = "cpam"


@dataclass(frozen=True)
class SoftNmsConfig:
    sigma_s: float = 0.5
    score_floor: float = 0.001
    per_class: bool = True


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int = 1
    proto_channels: int = 32
    proto_stride: int = 4
    conf_thresh: float = 0.001
    max_candidates: int = 300
    max_det: int = 100
    anchor_scale: float = 4.0


@dataclass(frozen=True)
class Bypass:
    ssff: bool = False
    tfe: bool = False
    cpam: bool = False


@dataclass(frozen=True)
class Junctions:
    """Named wiring choices of the neck.

    ``p4_merge`` / ``p3_merge``: fuse each top-down merge with a triple
    feature encoder (``tfe``) or a plain upsample-and-concat (``concat``).
    ``cpam_input1``: the map gated by channel attention.
    ``bottom_up_from``: the P3-scale map the bottom-up path starts from.
    """

    p4_merge: str = "tfe"
    p3_merge: str = "tfe"
    cpam_input1: str = "p3_merge"
    bottom_up_from: str = "p3_merge"


@dataclass(frozen=True)
class NeckConfig:
    c3_width: int = 256
    input_size: int = 640
    seed: int = 0
    bn_eps: float = 1e-5
    ssff: SsffConfig = field(default_factory=SsffConfig)
    tfe: TfeConfig = field(default_factory=TfeConfig)
    cpam: CpamConfig = field(default_factory=CpamConfig)
    soft_nms: SoftNmsConfig = field(default_factory=SoftNmsConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    bypass: Bypass = field(default_factory=Bypass)
    junctions: Junctions = field(default_factory=Junctions)

    @property
    def ssff_channels(self) -> int:
        return self.ssff.channels or self.c3_width

    @classmethod
    def from_dict(cls, doc) -> "NeckConfig":
        validate(doc)
        sub = {
            "ssff": SsffConfig, "tfe": TfeConfig, "cpam": CpamConfig, "soft_nms": SoftNmsConfig,
            "head": HeadConfig, "bypass": Bypass, "junctions": Junctions,
        }
        kwargs = {}
        for key, value in doc.items():
            if key in sub:
                value = dict(value)
                if "fuse3d_kernel" in value:
                    value["fuse3d_kernel"] = tuple(value["fuse3d_kernel"])
                value = sub[key](**value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["ssff"]["fuse3d_kernel"] = list(self.ssff.fuse3d_kernel)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "NeckConfig":
        """Copy with top-level or ``section__field`` overrides (``bypass__cpam=True``)."""
        doc = self.to_dict()
        for key, value in changes.items():
            if "__" in key:
                section, name = key.split("__", 1)
                doc[section][name] = list(value) if isinstance(value, tuple) else value
            else:
                doc[key] = value
        return NeckConfig.from_dict(doc)


def validate(doc) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, path=err.json_path)


def load_config(path: Optional[str]) -> NeckConfig:
    if path is None:
        return NeckConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return NeckConfig.from_dict(doc)

"""Toy backbone, neck wiring and head stub.

Dataflow (``C`` = ``c3_width``; strides relative to the input image)::

    image -> 5 x [3x3 s2 conv + SiLU] -> P2 (C/2, s4), P3 (C, s8), P4 (2C, s16), P5 (4C, s32)

    T5 = lateral5(P5)                               2C, s32
    M4 = merge4(TFE(P3, P4, T5))     [p4_merge]     2C, s16
    T4 = lateral4(M4)                               C,  s16
    M3 = merge3(TFE(P2, P3, T4))     [p3_merge]     C,  s8
    S  = SSFF(P3, P4, P5)                           C,  s8
    N3 = attention(M3, S)            [cpam_input1]  C,  s8
    N4 = merge_n4(concat(down3(M3), T4))            2C, s16   [bottom_up_from]
    N5 = merge_n5(concat(down4(N4), T5))            4C, s32

With ``p*_merge = "concat"`` (or ``bypass.tfe``) a merge becomes the plain
FPN ``concat(medium, upsample(small))``. ``bypass.ssff`` replaces ``S`` with
zeros; ``bypass.cpam`` replaces the attention with ``M3 + S``. Since the
bottom-up path starts from ``M3`` by default, the SSFF and CPAM bypasses
change only ``N3``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .config import NeckConfig
from .cpam import CpamWeights, cpam_forward
from .errors import ConfigError, DimensionError
from .params import ParamStore
from .postprocess import Detection, SoftNmsParams, soft_nms
from .ssff import SsffWeights, ssff_forward
from .tensor import _frozen, activate, add, concat, convolve, tensor, upsample_nearest
from .tfe import TfeWeights, tfe_forward

STRIDES = (8, 16, 32)
BACKBONE_STRIDE = 32

AttentionFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
AttentionFactory = Callable[[ParamStore, int, NeckConfig], AttentionFn]

ATTENTIONS: Dict[str, AttentionFactory] = {}


def register_attention(name: str):
    """Register a factory ``(params, channels, cfg) -> fn(input1, input2)`` for the P3 branch."""

    def deco(factory: AttentionFactory) -> AttentionFactory:
        ATTENTIONS[name] = factory
        return factory

    return deco


@register_attention("cpam")
def _cpam_attention(params: ParamStore, channels: int, cfg: NeckConfig) -> AttentionFn:
    w = CpamWeights.from_params(params, channels, cfg.cpam.gamma, cfg.cpam.b,
                                cfg.cpam.pos_reduction, prefix="cpam")
    return lambda x1, x2: cpam_forward(x1, x2, w.channel, w.position)


@dataclass(frozen=True)
class FeaturePyramid:
    """Backbone taps. ``p2`` is the extra stride-4 map used by the P3-scale encoder."""

    p3: np.ndarray
    p4: np.ndarray
    p5: np.ndarray
    p2: Optional[np.ndarray] = None

    def __post_init__(self):
        p3, p4, p5 = self.p3, self.p4, self.p5
        for name, t in (("p3", p3), ("p4", p4), ("p5", p5)):
            if t.ndim != 4:
                raise DimensionError(f"{name} must be rank 4, got shape {t.shape}")
        for axis in (2, 3):
            if p3.shape[axis] != 2 * p4.shape[axis] or p4.shape[axis] != 2 * p5.shape[axis]:
                raise DimensionError(f"axis {axis}: spatial ratios must be 4:2:1", axis=axis)
        c3 = p3.shape[1]
        if p4.shape[1] != 2 * c3 or p5.shape[1] != 4 * c3:
            raise DimensionError("axis 1: channel ratios must be 1:2:4", axis=1)


def backbone_widths(c3: int) -> Tuple[int, ...]:
    return (max(1, c3 // 4), max(1, c3 // 2), c3, 2 * c3, 4 * c3)


def toy_backbone(image, cfg: NeckConfig, params: Optional[ParamStore] = None) -> FeaturePyramid:
    """Five stride-2 conv+SiLU stages with seeded weights; taps after strides 4/8/16/32."""
    image = tensor(image)
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"image must be N x 3 x H x W, got shape {image.shape}")
    for axis in (2, 3):
        if image.shape[axis] % BACKBONE_STRIDE:
            raise DimensionError(
                f"axis {axis}: extent {image.shape[axis]} not divisible by {BACKBONE_STRIDE}", axis=axis)
    params = params if params is not None else ParamStore(cfg.seed, bn_eps=cfg.bn_eps)
    x, in_c, taps = image, 3, []
    for i, out_c in enumerate(backbone_widths(cfg.c3_width)):
        spec = params.conv(f"backbone.stage{i + 1}", out_c, in_c, (3, 3), stride=2, padding=1)
        x = activate(convolve(x, spec), "silu")
        taps.append(x)
        in_c = out_c
    return FeaturePyramid(p2=taps[1], p3=taps[2], p4=taps[3], p5=taps[4])


def _conv_silu(x, params: ParamStore, name: str, out_c: int, k: int = 1, stride: int = 1) -> np.ndarray:
    spec = params.conv(name, out_c, x.shape[1], (k, k), stride=stride, padding=k // 2)
    return activate(convolve(x, spec), "silu")


def _merge(large, medium, small, mode: str, width: int, params: ParamStore,
           name: str, cfg: NeckConfig) -> np.ndarray:
    if mode == "tfe":
        if large is None:
            raise DimensionError(f"{name}: TFE merge needs a large (2x resolution) input")
        w = TfeWeights.from_params(params, width, large.shape[1], medium.shape[1], small.shape[1],
                                   prefix=f"neck.tfe_{name}", hybrid=cfg.tfe.hybrid)
        return _conv_silu(tfe_forward(large, medium, small, w), params, f"neck.merge_{name}", width)
    fused = concat([medium, upsample_nearest(small, 2)], axis=1)
    return _conv_silu(fused, params, f"neck.concat_{name}", width)


def neck_stages(pyr: FeaturePyramid, cfg: NeckConfig, params: ParamStore) -> Dict[str, np.ndarray]:
    """Run the neck and return every named intermediate (``t5``, ``m4`` ... ``n5``)."""
    c = cfg.c3_width
    if pyr.p3.shape[1] != c:
        raise DimensionError(f"axis 1: p3 has {pyr.p3.shape[1]} channels, config says {c}", axis=1)
    j = cfg.junctions
    p4_mode = "concat" if cfg.bypass.tfe else j.p4_merge
    p3_mode = "concat" if cfg.bypass.tfe else j.p3_merge
    out: Dict[str, np.ndarray] = {}

    out["t5"] = _conv_silu(pyr.p5, params, "neck.lateral5", 2 * c)
    out["m4"] = _merge(pyr.p3, pyr.p4, out["t5"], p4_mode, 2 * c, params, "p4", cfg)
    out["t4"] = _conv_silu(out["m4"], params, "neck.lateral4", c)
    out["m3"] = _merge(pyr.p2, pyr.p3, out["t4"], p3_mode, c, params, "p3", cfg)

    if cfg.bypass.ssff:
        out["ssff"] = _frozen(np.zeros_like(out["m3"]))
    else:
        sc = cfg.ssff_channels
        w = SsffWeights.from_params(
            params, sc, pyr.p4.shape[1], pyr.p5.shape[1],
            p3_channels=pyr.p3.shape[1] if cfg.ssff.reduce_p3 else None,
            fuse3d_kernel=cfg.ssff.fuse3d_kernel, prefix="ssff")
        s = ssff_forward(pyr.p3, pyr.p4, pyr.p5, w)
        if sc != c:
            s = _conv_silu(s, params, "neck.ssff_out", c)
        out["ssff"] = s

    input1 = out["m3"] if j.cpam_input1 == "p3_merge" else pyr.p3
    if cfg.bypass.cpam:
        out["n3"] = add(input1, out["ssff"])
    else:
        if cfg.cpam.attention not in ATTENTIONS:
            raise ConfigError(f"unknown attention {cfg.cpam.attention!r}; "
                              f"registered: {sorted(ATTENTIONS)}", path="$.cpam.attention")
        attend = ATTENTIONS[cfg.cpam.attention](params, c, cfg)
        out["n3"] = attend(input1, out["ssff"])

    start = out["m3"] if j.bottom_up_from == "p3_merge" else out["n3"]
    down3 = _conv_silu(start, params, "neck.down3", c, k=3, stride=2)
    out["n4"] = _conv_silu(concat([down3, out["t4"]], axis=1), params, "neck.merge_n4", 2 * c)
    down4 = _conv_silu(out["n4"], params, "neck.down4", 2 * c, k=3, stride=2)
    out["n5"] = _conv_silu(concat([down4, out["t5"]], axis=1), params, "neck.merge_n5", 4 * c)
    return out


def neck_forward(pyr: FeaturePyramid, cfg: NeckConfig,
                 params: ParamStore) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = neck_stages(pyr, cfg, params)
    return s["n3"], s["n4"], s["n5"]


class HeadOutput(NamedTuple):
    detections: List[List[Detection]]  # one list per batch image, after Soft-NMS
    proto: np.ndarray                  # N x proto_channels x H/proto_stride x W/proto_stride
    raw: List[np.ndarray]              # per-level N x (5 + nc) x H_l x W_l head maps


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_level(raw: np.ndarray, stride: int, anchor: float, num_classes: int):
    """Decode one level's head map into ``(boxes, scores, classes)`` per image.

    Centre ``(2*sig(t) - 0.5 + grid) * stride``; size ``(2*sig(t))^2 * anchor``;
    score ``sig(obj) * max sig(cls)``.
    """
    t = raw.astype(np.float64)
    n, _, h, w = t.shape
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sig = _sigmoid(t)
    cx = (2.0 * sig[:, 0] - 0.5 + gx) * stride
    cy = (2.0 * sig[:, 1] - 0.5 + gy) * stride
    bw = (2.0 * sig[:, 2]) ** 2 * anchor
    bh = (2.0 * sig[:, 3]) ** 2 * anchor
    cls = sig[:, 5:5 + num_classes]
    scores = sig[:, 4] * cls.max(axis=1)
    classes = cls.argmax(axis=1)
    boxes = np.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], axis=-1)
    return boxes.reshape(n, -1, 4), scores.reshape(n, -1), classes.reshape(n, -1)


def head_stub(n3, n4, n5, cfg: NeckConfig, params: ParamStore) -> HeadOutput:
    """Untrained 1x1 detection heads + proto branch; detections go through Soft-NMS."""
    hc = cfg.head
    levels = (n3, n4, n5)
    for lvl, t in enumerate(levels):
        if t.ndim != 4:
            raise DimensionError(f"head input {lvl} must be rank 4, got shape {t.shape}")
    img_h, img_w = n3.shape[2] * STRIDES[0], n3.shape[3] * STRIDES[0]
    raw, per_level = [], []
    for lvl, (t, stride) in enumerate(zip(levels, STRIDES)):
        spec = params.conv(f"head.detect{lvl}", 5 + hc.num_classes, t.shape[1], (1, 1), init="small")
        out = convolve(t, spec)
        raw.append(out)
        per_level.append(decode_level(out, stride, hc.anchor_scale * stride, hc.num_classes))

    boxes = np.concatenate([b for b, _, _ in per_level], axis=1)
    scores = np.concatenate([s for _, s, _ in per_level], axis=1)
    classes = np.concatenate([c for _, _, c in per_level], axis=1)
    boxes[..., 0::2] = np.clip(boxes[..., 0::2], 0, img_w)
    boxes[..., 1::2] = np.clip(boxes[..., 1::2], 0, img_h)

    nms_params = SoftNmsParams(cfg.soft_nms.sigma_s, cfg.soft_nms.score_floor, cfg.soft_nms.per_class)
    detections = []
    for i in range(boxes.shape[0]):
        order = np.argsort(-scores[i], kind="stable")
        order = order[scores[i][order] >= hc.conf_thresh][: hc.max_candidates]
        dets = [Detection(tuple(boxes[i, j]), float(scores[i, j]), int(classes[i, j])) for j in order]
        detections.append(soft_nms(dets, nms_params)[: hc.max_det])

    up = STRIDES[0] // hc.proto_stride
    proto_in = upsample_nearest(n3, up)
    proto = _conv_silu(proto_in, params, "head.proto", hc.proto_channels)
    return HeadOutput(detections, proto, raw)


@dataclass
class ForwardResult:
    pyramid: FeaturePyramid
    stages: Dict[str, np.ndarray]
    head: HeadOutput
    times_ms: Dict[str, float] = field(default_factory=dict)

    @property
    def outputs(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.stages["n3"], self.stages["n4"], self.stages["n5"]


class AsfModel:
    """Config + weights bundle running backbone, neck and head end to end."""

    def __init__(self, cfg: Optional[NeckConfig] = None, params: Optional[ParamStore] = None):
        self.cfg = cfg or NeckConfig()
        self.params = params if params is not None else ParamStore(self.cfg.seed, bn_eps=self.cfg.bn_eps)

    def backbone(self, image) -> FeaturePyramid:
        return toy_backbone(image, self.cfg, self.params)

    def neck(self, pyr: FeaturePyramid):
        return neck_forward(pyr, self.cfg, self.params)

    def forward(self, image) -> ForwardResult:
        times = {}
        t0 = time.perf_counter()
        pyr = self.backbone(image)
        t1 = time.perf_counter()
        stages = neck_stages(pyr, self.cfg, self.params)
        t2 = time.perf_counter()
        head = head_stub(stages["n3"], stages["n4"], stages["n5"], self.cfg, self.params)
        t3 = time.perf_counter()
        times["backbone"] = (t1 - t0) * 1e3
        times["neck"] = (t2 - t1) * 1e3
        times["head"] = (t3 - t2) * 1e3
        return ForwardResult(pyr, stages, head, times)

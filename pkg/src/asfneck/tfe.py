"""Triple feature encoder.

Large, medium and small maps are brought to the medium resolution and the
same channel width ``C``, passed through one more convolution each, and
concatenated on channels in the order (large, medium, small). The output has
the medium map's resolution and ``3 * C`` channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError
from .params import ParamStore
from .tensor import ConvSpec, _frozen, activate, concat, convolve, pool, upsample_nearest

HYBRID_MODES = ("sum", "mean")


def hybrid_downsample(x, mode: str = "sum") -> np.ndarray:
    """Halve H and W with ``maxpool(2, 2) + avgpool(2, 2)``.

    ``mode="mean"`` averages the two pooled maps instead of summing them.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise DimensionError(f"hybrid_downsample expects rank 4, got shape {x.shape}")
    for axis in (2, 3):
        if x.shape[axis] % 2:
            raise DimensionError(f"axis {axis}: extent {x.shape[axis]} is odd", axis=axis)
    if mode not in HYBRID_MODES:
        raise ValueError(f"hybrid mode must be one of {HYBRID_MODES}, got {mode!r}")
    mx = pool(x, "max", 2, 2).astype(np.float64)
    av = pool(x, "avg", 2, 2)
    out = mx + av
    if mode == "mean":
        out = out / 2.0
    return _frozen(out)


@dataclass(frozen=True)
class TfeWeights:
    adjust_l: ConvSpec
    adjust_m: ConvSpec
    adjust_s: ConvSpec
    branch_l: ConvSpec
    branch_m: ConvSpec
    branch_s: ConvSpec
    hybrid: str = "sum"
    act: Optional[str] = "silu"

    def __post_init__(self):
        width = self.width
        for name in ("adjust_l", "adjust_m", "adjust_s"):
            if getattr(self, name).out_channels != width:
                raise DimensionError(f"{name} must output {width} channels", axis=1)
        for name in ("branch_l", "branch_m", "branch_s"):
            spec = getattr(self, name)
            if spec.in_channels != width or spec.out_channels != width:
                raise DimensionError(f"{name} must map {width} -> {width} channels", axis=1)
        if self.hybrid not in HYBRID_MODES:
            raise ValueError(f"hybrid mode must be one of {HYBRID_MODES}, got {self.hybrid!r}")

    @property
    def width(self) -> int:
        return self.adjust_m.out_channels

    @classmethod
    def from_params(cls, params: ParamStore, width: int, large_c: int, medium_c: int, small_c: int,
                    prefix: str = "tfe", hybrid: str = "sum") -> "TfeWeights":
        return cls(
            adjust_l=params.conv(f"{prefix}.adjust_l", width, large_c, (1, 1)),
            adjust_m=params.conv(f"{prefix}.adjust_m", width, medium_c, (1, 1)),
            adjust_s=params.conv(f"{prefix}.adjust_s", width, small_c, (1, 1)),
            branch_l=params.conv(f"{prefix}.branch_l", width, width, (1, 1)),
            branch_m=params.conv(f"{prefix}.branch_m", width, width, (1, 1)),
            branch_s=params.conv(f"{prefix}.branch_s", width, width, (1, 1)),
            hybrid=hybrid,
        )


def _conv_act(x, spec: ConvSpec, act: Optional[str]) -> np.ndarray:
    y = convolve(x, spec)
    return activate(y, act) if act else y


def tfe_forward(large, medium, small, w: TfeWeights) -> np.ndarray:
    large, medium, small = (np.asarray(t, dtype=np.float32) for t in (large, medium, small))
    for name, t in (("large", large), ("medium", medium), ("small", small)):
        if t.ndim != 4:
            raise DimensionError(f"{name} must be rank 4, got shape {t.shape}")
        if t.shape[0] != medium.shape[0]:
            raise DimensionError(f"{name} batch {t.shape[0]} != medium batch {medium.shape[0]}", axis=0)
    for axis in (2, 3):
        if large.shape[axis] != 2 * medium.shape[axis]:
            raise DimensionError(
                f"axis {axis}: large extent {large.shape[axis]} != 2 x medium {medium.shape[axis]}",
                axis=axis)
        if 2 * small.shape[axis] != medium.shape[axis]:
            raise DimensionError(
                f"axis {axis}: 2 x small extent {small.shape[axis]} != medium {medium.shape[axis]}",
                axis=axis)

    f_l = hybrid_downsample(_conv_act(large, w.adjust_l, w.act), w.hybrid)
    f_m = _conv_act(medium, w.adjust_m, w.act)
    f_s = upsample_nearest(_conv_act(small, w.adjust_s, w.act), 2)
    f_l = _conv_act(f_l, w.branch_l, w.act)
    f_m = _conv_act(f_m, w.branch_m, w.act)
    f_s = _conv_act(f_s, w.branch_s, w.act)
    return concat([f_l, f_m, f_s], axis=1)

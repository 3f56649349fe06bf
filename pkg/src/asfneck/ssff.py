"""Scale sequence feature fusion.

P4 and P5 are projected to the fused width with 1x1 convolutions, upsampled
(nearest) to P3's resolution, and the three maps are stacked along a new
depth axis in the fixed order (P3, P4, P5). A 3D convolution with depth
kernel 3 and no depth padding collapses the scale axis, followed by 3D batch
norm and SiLU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError
from .params import ParamStore
from .tensor import (
    BatchNormParams,
    ConvSpec,
    activate,
    concat,
    convolve,
    squeeze,
    unsqueeze,
    upsample_nearest,
)

DEFAULT_CHANNELS = 256
SCALE_DEPTH = 3


@dataclass(frozen=True)
class SsffWeights:
    reduce_p4: ConvSpec
    reduce_p5: ConvSpec
    fuse3d: ConvSpec
    bn: BatchNormParams
    reduce_p3: Optional[ConvSpec] = None

    def __post_init__(self):
        for name in ("reduce_p4", "reduce_p5", "reduce_p3"):
            spec = getattr(self, name)
            if spec is None:
                continue
            if spec.dims != 2 or spec.kernel != (1, 1):
                raise DimensionError(f"{name} must be a 1x1 2D convolution, got kernel {spec.kernel}")
        f = self.fuse3d
        if f.dims != 3:
            raise DimensionError(f"fuse3d must be a 3D convolution, got {f.dims}D")
        if f.kernel[0] != SCALE_DEPTH or f.padding[0] != 0 or f.stride[0] != 1:
            raise DimensionError("fuse3d needs depth kernel 3, depth stride 1 and no depth padding", axis=2)
        if f.in_channels != f.out_channels or f.out_channels != self.channels:
            raise DimensionError(
                f"fuse3d must map {self.channels} -> {self.channels} channels, "
                f"got {f.in_channels} -> {f.out_channels}", axis=1)
        if self.reduce_p5.out_channels != self.channels:
            raise DimensionError("reduce_p4 and reduce_p5 must have the same output width", axis=1)

    @property
    def channels(self) -> int:
        return self.reduce_p4.out_channels

    @classmethod
    def from_params(cls, params: ParamStore, channels: int, p4_channels: int, p5_channels: int,
                    p3_channels: Optional[int] = None, fuse3d_kernel: Sequence[int] = (3, 1, 1),
                    prefix: str = "ssff") -> "SsffWeights":
        kd, kh, kw = fuse3d_kernel
        reduce_p3 = None
        if p3_channels is not None and p3_channels != channels:
            reduce_p3 = params.conv(f"{prefix}.reduce_p3", channels, p3_channels, (1, 1))
        return cls(
            reduce_p4=params.conv(f"{prefix}.reduce_p4", channels, p4_channels, (1, 1)),
            reduce_p5=params.conv(f"{prefix}.reduce_p5", channels, p5_channels, (1, 1)),
            fuse3d=params.conv(f"{prefix}.fuse3d", channels, channels, (kd, kh, kw),
                               padding=(0, kh // 2, kw // 2)),
            bn=params.bn(f"{prefix}.bn", channels),
            reduce_p3=reduce_p3,
        )


def _check_ratio(p3: np.ndarray, other: np.ndarray, factor: int, name: str) -> None:
    if other.ndim != 4:
        raise DimensionError(f"{name} must be rank 4, got shape {other.shape}")
    if other.shape[0] != p3.shape[0]:
        raise DimensionError(f"{name} batch {other.shape[0]} != p3 batch {p3.shape[0]}", axis=0)
    for axis in (2, 3):
        if other.shape[axis] * factor != p3.shape[axis]:
            raise DimensionError(
                f"axis {axis}: {name} extent {other.shape[axis]} x {factor} != p3 extent {p3.shape[axis]}",
                axis=axis)


def ssff_forward(p3, p4, p5, w: SsffWeights) -> np.ndarray:
    """Fuse (P3, P4, P5) into one map with P3's shape (at the fused width)."""
    p3, p4, p5 = (np.asarray(t, dtype=np.float32) for t in (p3, p4, p5))
    if p3.ndim != 4:
        raise DimensionError(f"p3 must be rank 4, got shape {p3.shape}")
    _check_ratio(p3, p4, 2, "p4")
    _check_ratio(p3, p5, 4, "p5")
    if w.reduce_p3 is not None:
        p3 = convolve(p3, w.reduce_p3)
    elif p3.shape[1] != w.channels:
        raise DimensionError(
            f"axis 1: p3 has {p3.shape[1]} channels, fused width is {w.channels}", axis=1)

    p4 = upsample_nearest(convolve(p4, w.reduce_p4), 2)
    p5 = upsample_nearest(convolve(p5, w.reduce_p5), 4)
    stack = concat([unsqueeze(t, 2) for t in (p3, p4, p5)], axis=2)
    fused = activate(w.bn(convolve(stack, w.fuse3d)), "silu")
    return squeeze(fused, 2)

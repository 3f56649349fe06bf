"""Channel and position attention.

Channel attention pools each channel to its spatial mean and mixes each
channel with its ``k`` nearest neighbours through a 1D convolution (no
dimensionality reduction); ``k`` grows with ``log2(C)``. A sigmoid turns the
result into a per-channel gate.

Position attention pools along each spatial axis, encodes the two strips
jointly with a shared 1x1 convolution + BN + SiLU, splits them again and
produces a width gate ``s_w`` and a height gate ``s_h``; the output is the
Hadamard product ``E * s_w * s_h``.

``cpam_forward`` composes the two: the channel-gated first input is added to
the second input (the SSFF features) and the sum goes through position
attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .params import ParamStore
from .tensor import (
    BatchNormParams,
    ConvSpec,
    _frozen,
    activate,
    add,
    concat,
    convolve,
    global_avg_pool,
    ordered_mean,
)


def kernel_size_for(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Odd 1D kernel size nearest to ``(log2(C) + b) / gamma``.

    Exact ties between two odd numbers go to the larger one, so C=128 with
    gamma=2, b=1 (t=4) gives 5.
    """
    if channels < 2:
        raise ValueError(f"channel count must be >= 2, got {channels}")
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    t = (math.log2(channels) + b) / gamma
    k = 2 * math.floor((t - 1) / 2 + 0.5) + 1
    return max(k, 1)


@dataclass(frozen=True)
class ChannelAttnConfig:
    weights: np.ndarray
    gamma: int = 2
    b: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        if w.size % 2 == 0:
            raise ValueError(f"channel attention kernel must have odd length, got {w.size}")
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class PositionAttnState:
    joint: ConvSpec
    bn: BatchNormParams
    split_w: ConvSpec
    split_h: ConvSpec

    def __post_init__(self):
        for name in ("joint", "split_w", "split_h"):
            spec = getattr(self, name)
            if spec.dims != 2 or spec.kernel != (1, 1):
                raise DimensionError(f"{name} must be a 1x1 2D convolution")
        mid = self.joint.out_channels
        for name in ("split_w", "split_h"):
            spec = getattr(self, name)
            if spec.in_channels != mid or spec.out_channels != self.joint.in_channels:
                raise DimensionError(f"{name} must map {mid} -> {self.joint.in_channels} channels", axis=1)


class PositionGates(NamedTuple):
    p_w: np.ndarray  # N x C x 1 x W, mean over height
    p_h: np.ndarray  # N x C x H x 1, mean over width
    s_w: np.ndarray  # N x C x 1 x W
    s_h: np.ndarray  # N x C x H x 1


@dataclass(frozen=True)
class CpamWeights:
    channel: ChannelAttnConfig
    position: PositionAttnState

    @classmethod
    def from_params(cls, params: ParamStore, channels: int, gamma: int = 2, b: int = 1,
                    pos_reduction: int = 1, prefix: str = "cpam") -> "CpamWeights":
        k = kernel_size_for(channels, gamma, b)
        mid = max(1, channels // pos_reduction)
        ch = ChannelAttnConfig(params.get(f"{prefix}.ch.conv1d.weight", (1, 1, k)), gamma, b)
        pos = PositionAttnState(
            joint=params.conv(f"{prefix}.pos.joint", mid, channels, (1, 1), bias=False),
            bn=params.bn(f"{prefix}.pos.bn", mid),
            split_w=params.conv(f"{prefix}.pos.split_w", channels, mid, (1, 1)),
            split_h=params.conv(f"{prefix}.pos.split_h", channels, mid, (1, 1)),
        )
        return cls(ch, pos)


def _rank4(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise DimensionError(f"attention expects N x C x H x W input, got shape {x.shape}")
    return x


def channel_gates(e, cfg: ChannelAttnConfig) -> np.ndarray:
    """Per-channel gates ``N x C x 1 x 1`` with values in (0, 1)."""
    e = _rank4(e)
    n, c = e.shape[:2]
    k = kernel_size_for(c, cfg.gamma, cfg.b) if c >= 2 else 1
    if cfg.k != k:
        raise ValueError(f"kernel length {cfg.k} does not match k={k} for C={c}, "
                         f"gamma={cfg.gamma}, b={cfg.b}")
    pooled = global_avg_pool(e).reshape(n, 1, c)
    spec = ConvSpec(cfg.weights.reshape(1, 1, k), None, stride=1, padding=(k - 1) // 2)
    mixed = convolve(pooled, spec, dims=1)
    return activate(mixed, "sigmoid").reshape(n, c, 1, 1)


def channel_attention(e, cfg: ChannelAttnConfig) -> np.ndarray:
    e = _rank4(e)
    return _frozen(e.astype(np.float64) * channel_gates(e, cfg))


def position_gates(e, st: PositionAttnState) -> PositionGates:
    e = _rank4(e)
    w = e.shape[3]
    p_w = _frozen(ordered_mean(e, (2,)))
    p_h = _frozen(ordered_mean(e, (3,)))
    strip = concat([p_w, p_h.transpose(0, 1, 3, 2)], axis=3)
    a = activate(st.bn(convolve(strip, st.joint)), "silu")
    a_w = a[..., :w]
    a_h = a[..., w:].transpose(0, 1, 3, 2)
    s_w = activate(convolve(a_w, st.split_w), "sigmoid")
    s_h = activate(convolve(a_h, st.split_h), "sigmoid")
    return PositionGates(p_w, p_h, s_w, s_h)


def position_attention(e, st: PositionAttnState) -> np.ndarray:
    e = _rank4(e)
    g = position_gates(e, st)
    return _frozen(e.astype(np.float64) * g.s_w * g.s_h)


def cpam_forward(input1, input2, cfg: ChannelAttnConfig, st: PositionAttnState) -> np.ndarray:
    """Channel-gate ``input1``, add ``input2``, then apply position attention."""
    input1, input2 = _rank4(input1), _rank4(input2)
    if input1.shape != input2.shape:
        raise DimensionError(f"cpam inputs differ in shape: {input1.shape} vs {input2.shape}")
    return position_attention(add(channel_attention(input1, cfg), input2), st)

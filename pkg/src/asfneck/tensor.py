"""Dense float32 tensors and the primitive kernels the neck is built from.

Tensors are plain ``numpy.ndarray`` objects: float32, C-contiguous, rank 1-5,
marked read-only. Every operation here is a pure function returning a new
read-only array. Reductions (convolution, pooling, means) accumulate in
float64 and round once to float32.

Convolution follows the cross-correlation convention (no kernel flip) and
zero padding only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

MAX_RANK = 5

IntOrTuple = Union[int, Sequence[int]]


def tensor(data, dtype=np.float32) -> np.ndarray:
    """Validate ``data`` and return it as a frozen float32 tensor."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise DimensionError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    for axis, extent in enumerate(arr.shape):
        if extent < 1:
            raise DimensionError(f"axis {axis} has extent {extent}; extents must be >= 1", axis=axis)
    if arr.flags.writeable:
        if arr is data or (isinstance(data, np.ndarray) and np.may_share_memory(arr, data)):
            arr = arr.copy()
        arr.flags.writeable = False
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float32)
    out.flags.writeable = False
    return out


def _as_input(x) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.dtype == np.float32:
        return x
    return tensor(x)


def _expand(value: IntOrTuple, dims: int, name: str) -> Tuple[int, ...]:
    if np.isscalar(value):
        out = (int(value),) * dims
    else:
        out = tuple(int(v) for v in value)
    if len(out) != dims:
        raise ValueError(f"{name} needs {dims} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class ConvSpec:
    """Weights and geometry of a 1D/2D/3D convolution.

    ``weight`` has shape ``(out_c, in_c, *kernel)``; ``bias`` is ``(out_c,)``
    or ``None``.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: IntOrTuple = 1
    padding: IntOrTuple = 0

    def __post_init__(self):
        weight = tensor(self.weight)
        if weight.ndim not in (3, 4, 5):
            raise DimensionError(
                f"conv weight must have rank 3, 4 or 5 (1D/2D/3D), got {weight.ndim}"
            )
        dims = weight.ndim - 2
        stride = _expand(self.stride, dims, "stride")
        padding = _expand(self.padding, dims, "padding")
        if any(s < 1 for s in stride):
            raise ValueError(f"stride must be >= 1, got {stride}")
        if any(p < 0 for p in padding):
            raise ValueError(f"padding must be >= 0, got {padding}")
        bias = None
        if self.bias is not None:
            bias = tensor(self.bias)
            if bias.shape != (weight.shape[0],):
                raise DimensionError(
                    f"bias shape {bias.shape} does not match out channels {weight.shape[0]}", axis=0
                )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "padding", padding)

    @property
    def dims(self) -> int:
        return self.weight.ndim - 2

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> Tuple[int, ...]:
        return self.weight.shape[2:]


def conv_output_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - kernel) // stride + 1


def convolve(x, spec: ConvSpec, dims: Optional[int] = None) -> np.ndarray:
    """Cross-correlate ``x`` (``N x C x *spatial``) with ``spec``.

    Output extent per spatial axis is ``floor((in + 2*pad - k) / stride) + 1``.
    Batch items are processed independently, so results for one image do not
    depend on what else is in the batch.
    """
    x = _as_input(x)
    if dims is None:
        dims = spec.dims
    if dims != spec.dims:
        raise DimensionError(f"{dims}D convolution requested with a {spec.dims}D kernel")
    if x.ndim != dims + 2:
        raise DimensionError(
            f"{dims}D convolution expects rank {dims + 2} input, got shape {x.shape}", axis=None
        )
    if x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"axis 1 (channels): input has {x.shape[1]}, kernel expects {spec.in_channels}", axis=1
        )
    spatial = x.shape[2:]
    out_sp = []
    for i, (n, k, s, p) in enumerate(zip(spatial, spec.kernel, spec.stride, spec.padding)):
        o = conv_output_extent(n, k, s, p)
        if o < 1:
            raise DimensionError(
                f"axis {i + 2}: extent {n} with padding {p} is smaller than kernel {k}", axis=i + 2
            )
        out_sp.append(o)
    out_sp = tuple(out_sp)

    batch, chans = x.shape[:2]
    w = spec.weight.astype(np.float64).reshape(spec.out_channels, -1)
    bias = None if spec.bias is None else spec.bias.astype(np.float64)[:, None]
    pointwise = all(k == 1 for k in spec.kernel)
    sp_axes = tuple(range(1, dims + 1))
    out = np.empty((batch, spec.out_channels) + out_sp, dtype=np.float32)

    for n in range(batch):
        xn = x[n].astype(np.float64)
        if any(spec.padding):
            xn = np.pad(xn, [(0, 0)] + [(p, p) for p in spec.padding])
        if pointwise:
            sl = tuple(slice(0, o * s, s) for o, s in zip(out_sp, spec.stride))
            cols = xn[(slice(None),) + sl].reshape(chans, -1)
        else:
            win = sliding_window_view(xn, spec.kernel, axis=sp_axes)
            sl = tuple(slice(0, o * s, s) for o, s in zip(out_sp, spec.stride))
            win = win[(slice(None),) + sl]
            # (C, *out, *k) -> (C, *k, *out) so rows line up with weight.reshape(O, C*K)
            order = (0,) + tuple(range(dims + 1, 2 * dims + 1)) + sp_axes
            cols = win.transpose(order).reshape(chans * int(np.prod(spec.kernel)), -1)
        res = w @ cols
        if bias is not None:
            res += bias
        out[n] = res.reshape((spec.out_channels,) + out_sp)
    return _frozen(out)


def pool(x, kind: str, kernel: int, stride: int) -> np.ndarray:
    """Max or average pooling over the two spatial axes of an ``N x C x H x W`` tensor.

    Average pooling divides by the full window size.
    """
    x = _as_input(x)
    if x.ndim != 4:
        raise DimensionError(f"pool expects rank-4 input, got shape {x.shape}")
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if kernel < 1 or stride < 1:
        raise ValueError("pool kernel and stride must be >= 1")
    for axis in (2, 3):
        if kernel > x.shape[axis]:
            raise DimensionError(
                f"axis {axis}: pool kernel {kernel} exceeds extent {x.shape[axis]}", axis=axis
            )
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    if kind == "max":
        res = win.max(axis=(-2, -1))
    else:
        res = win.sum(axis=(-2, -1), dtype=np.float64) / (kernel * kernel)
    return _frozen(res)


def ordered_mean(x: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Mean over ``axes`` (kept as size-1) that is independent of element order.

    Values are sorted before float64 accumulation, so any permutation of the
    reduced positions gives a bit-identical result.
    """
    axes = tuple(a % x.ndim for a in axes)
    keep = [a for a in range(x.ndim) if a not in axes]
    moved = np.transpose(x, keep + list(axes))
    lead = moved.shape[: len(keep)]
    flat = np.sort(moved.reshape(lead + (-1,)).astype(np.float64), axis=-1)
    mean = flat.sum(axis=-1) / flat.shape[-1]
    out_shape = tuple(1 if a in axes else x.shape[a] for a in range(x.ndim))
    return mean.reshape(out_shape)


def global_avg_pool(x) -> np.ndarray:
    """``N x C x H x W`` -> ``N x C x 1 x 1`` spatial means."""
    x = _as_input(x)
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects rank-4 input, got shape {x.shape}")
    return _frozen(ordered_mean(x, (2, 3)))


def upsample_nearest(x, factor: int) -> np.ndarray:
    """Nearest-neighbour upsampling: ``out[y, x] = in[y // f, x // f]``."""
    x = _as_input(x)
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be an integer >= 1, got {factor}")
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects rank-4 input, got shape {x.shape}")
    factor = int(factor)
    if factor == 1:
        return x
    return _frozen(np.repeat(np.repeat(x, factor, axis=2), factor, axis=3))


def batch_norm_infer(x, mean, var, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Inference-mode batch norm over channel axis 1 of a rank-4 or rank-5 tensor."""
    x = _as_input(x)
    if x.ndim not in (4, 5):
        raise DimensionError(f"batch_norm_infer expects rank 4 or 5, got shape {x.shape}")
    chans = x.shape[1]
    params = []
    for name, v in (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)):
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != chans:
            raise DimensionError(f"axis 1: {name} has length {v.shape[0]}, input has {chans} channels", axis=1)
        params.append(v)
    mean, var, gamma, beta = params
    if np.any(var < 0):
        raise ValueError("batch norm variance must be non-negative")
    if eps < 0:
        raise ValueError("batch norm eps must be non-negative")
    denom = np.sqrt(var + eps)
    if np.any(denom == 0):
        raise ValueError("batch norm var + eps must be positive")
    scale = gamma / denom
    shift = beta - mean * scale
    bshape = (1, chans) + (1,) * (x.ndim - 2)
    res = x.astype(np.float64) * scale.reshape(bshape) + shift.reshape(bshape)
    return _frozen(res)


def _sigmoid64(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


# sigmoid clamp so float32 gates stay strictly inside (0, 1)
_SIG_LO = float(np.finfo(np.float32).tiny)
_SIG_HI = 1.0 - 2.0 ** -24


def activate(x, kind: str) -> np.ndarray:
    """Elementwise ``silu`` (``x * sigmoid(x)``) or ``sigmoid``.

    ``sigmoid`` saturates at the nearest float32 values inside (0, 1) rather
    than rounding to 0 or 1.
    """
    x = _as_input(x)
    x64 = x.astype(np.float64)
    if kind == "sigmoid":
        return _frozen(np.clip(_sigmoid64(x64), _SIG_LO, _SIG_HI))
    if kind == "silu":
        return _frozen(x64 * _sigmoid64(x64))
    raise ValueError(f"unknown activation {kind!r}")


def concat(inputs: Sequence[np.ndarray], axis: int) -> np.ndarray:
    inputs = [_as_input(t) for t in inputs]
    if not inputs:
        raise ValueError("concat needs at least one tensor")
    if len(inputs) == 1:
        return inputs[0]
    rank = inputs[0].ndim
    axis = axis % rank
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != rank:
            raise DimensionError(f"concat rank mismatch: {t.ndim} vs {rank}")
        for a in range(rank):
            if a != axis and t.shape[a] != ref[a]:
                raise DimensionError(
                    f"axis {a}: extent {t.shape[a]} does not match {ref[a]}", axis=a
                )
    return _frozen(np.concatenate(inputs, axis=axis))


def unsqueeze(x, axis: int) -> np.ndarray:
    x = _as_input(x)
    if not 0 <= axis <= x.ndim:
        raise DimensionError(f"unsqueeze axis {axis} out of range for rank {x.ndim}", axis=axis)
    if x.ndim + 1 > MAX_RANK:
        raise DimensionError(f"unsqueeze would exceed rank {MAX_RANK}")
    return np.expand_dims(x, axis)


def squeeze(x, axis: int) -> np.ndarray:
    x = _as_input(x)
    if not 0 <= axis < x.ndim:
        raise DimensionError(f"squeeze axis {axis} out of range for rank {x.ndim}", axis=axis)
    if x.shape[axis] != 1:
        raise DimensionError(f"axis {axis}: cannot squeeze extent {x.shape[axis]}", axis=axis)
    if x.ndim == 1:
        raise DimensionError("cannot squeeze a rank-1 tensor")
    return np.squeeze(x, axis)


def add(a, b) -> np.ndarray:
    """Elementwise sum of two same-shape tensors."""
    a, b = _as_input(a), _as_input(b)
    if a.shape != b.shape:
        for axis, (m, n) in enumerate(zip(a.shape, b.shape)):
            if m != n:
                raise DimensionError(f"axis {axis}: extent {m} vs {n}", axis=axis)
        raise DimensionError(f"rank mismatch: {a.shape} vs {b.shape}")
    return _frozen(a.astype(np.float64) + b)


@dataclass(frozen=True)
class BatchNormParams:
    """Per-channel running statistics and affine terms for inference batch norm."""

    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, channels: int) -> "BatchNormParams":
        return cls(
            mean=np.zeros(channels, np.float32),
            var=np.ones(channels, np.float32),
            gamma=np.ones(channels, np.float32),
            beta=np.zeros(channels, np.float32),
            eps=0.0,
        )

    def __call__(self, x) -> np.ndarray:
        return batch_norm_infer(x, self.mean, self.var, self.gamma, self.beta, self.eps)

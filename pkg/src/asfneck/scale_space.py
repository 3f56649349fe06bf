"""Gaussian scale-space stacks.

A scale-space level is the image smoothed with a 2D Gaussian of standard
deviation ``sigma``. The filter is applied separably (rows, then columns)
with a sampled, normalized kernel truncated at ``radius``. Near the borders
the result is divided by the in-bounds kernel mass, so constant images stay
constant right up to the edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import _frozen, tensor

IDENTITY_SIGMA = 1e-6


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float
    radius: Optional[int] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.radius is None:
            object.__setattr__(self, "radius", max(1, math.ceil(3 * self.sigma)))
        elif self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")


@dataclass(frozen=True)
class ScaleStack:
    levels: List[np.ndarray]
    sigmas: List[float]

    def __len__(self):
        return len(self.levels)


def gaussian_2d(w, h, sigma: float):
    """Continuous 2D Gaussian density ``exp(-(w^2+h^2)/(2 sigma^2)) / (2 pi sigma^2)``."""
    return np.exp(-(np.square(w) + np.square(h)) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def gaussian_kernel_1d(spec: GaussianSpec) -> np.ndarray:
    """Sampled Gaussian on ``-radius..radius`` normalized to unit sum (float64)."""
    x = np.arange(-spec.radius, spec.radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / spec.sigma) ** 2)
    return k / k.sum()


def gaussian_kernel_2d(spec: GaussianSpec) -> np.ndarray:
    """The separable 2D kernel as a ``(2r+1) x (2r+1)`` float32 tensor."""
    k = gaussian_kernel_1d(spec)
    return tensor(np.outer(k, k))


def _correlate_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = (len(k) - 1) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    win = sliding_window_view(np.pad(a, pad), len(k), axis=axis)
    return win @ k


def _in_bounds_mass(n: int, k: np.ndarray) -> np.ndarray:
    return _correlate_axis(np.ones(n), k, 0)


def gaussian_blur(image, spec: GaussianSpec) -> np.ndarray:
    """Blur each channel of an ``N x C x H x W`` tensor; output shape equals input shape."""
    image = tensor(image) if not isinstance(image, np.ndarray) else image
    if image.ndim != 4:
        raise DimensionError(f"gaussian_blur expects rank-4 input, got shape {image.shape}")
    k = gaussian_kernel_1d(spec)
    h, w = image.shape[2:]
    x = image.astype(np.float64)
    x = _correlate_axis(x, k, 3) / _in_bounds_mass(w, k)
    x = _correlate_axis(x, k, 2) / _in_bounds_mass(h, k)[:, None]
    return _frozen(x)


def build_scale_stack(image, sigmas: Sequence[float]) -> ScaleStack:
    """One blurred level per sigma. Levels with ``sigma < 1e-6`` are the input itself."""
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValueError("sigmas must be non-empty")
    if any(not s > 0 for s in sigmas):
        raise ValueError(f"sigmas must be > 0, got {sigmas}")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError(f"sigmas must be strictly increasing, got {sigmas}")
    image = tensor(image)
    if image.ndim != 4:
        raise DimensionError(f"scale stack expects rank-4 input, got shape {image.shape}")
    levels = [
        image if s < IDENTITY_SIGMA else gaussian_blur(image, GaussianSpec(s))
        for s in sigmas
    ]
    return ScaleStack(levels=levels, sigmas=sigmas)

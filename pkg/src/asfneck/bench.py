"""Neck throughput measurement."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from .assembly import AsfModel
from .config import NeckConfig


@dataclass(frozen=True)
class BenchReport:
    size: int
    iters: int
    samples_ms: List[float]
    mean_ms: float
    p50_ms: float
    p95_ms: float
    fps: float

    def as_dict(self) -> dict:
        return asdict(self)


def bench(cfg: NeckConfig, iters: int, size: int = None, warmup: int = 1) -> BenchReport:
    """Time ``neck_forward`` on a fixed pyramid from a seeded random image."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    size = size or cfg.input_size
    model = AsfModel(cfg)
    image = np.random.default_rng(cfg.seed).random((1, 3, size, size)).astype(np.float32)
    pyr = model.backbone(image)
    for _ in range(warmup):
        model.neck(pyr)
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter()
        model.neck(pyr)
        samples.append((time.perf_counter() - t0) * 1e3)
    arr = np.asarray(samples)
    mean = float(arr.mean())
    return BenchReport(
        size=size, iters=iters, samples_ms=samples, mean_ms=mean,
        p50_ms=float(np.percentile(arr, 50)), p95_ms=float(np.percentile(arr, 95)),
        fps=1000.0 / mean,
    )

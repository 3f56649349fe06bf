"""Named weight storage with seeded, order-independent generation.

Every parameter has a dotted name (``ssff.reduce_p4.weight``). A missing
parameter is generated from ``(seed, crc32(name))``, so its values do not
depend on which other parameters were requested first. A store can be saved
as a directory of ASFT files plus a ``manifest.json`` and loaded back.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from . import asft
from .errors import DimensionError
from .tensor import BatchNormParams, ConvSpec, tensor

MANIFEST = "manifest.json"


class ParamStore:
    def __init__(self, seed: int = 0, tensors: Optional[Dict[str, np.ndarray]] = None,
                 bn_eps: float = 1e-5):
        self.seed = int(seed)
        self.bn_eps = bn_eps
        self.tensors: Dict[str, np.ndarray] = {k: tensor(v) for k, v in (tensors or {}).items()}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def get(self, name: str, shape: Sequence[int], init: str = "he") -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        if name in self.tensors:
            found = self.tensors[name]
            if found.shape != shape:
                raise DimensionError(f"parameter {name} has shape {found.shape}, expected {shape}")
            return found
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "he":
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            data = self._rng(name).standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif init == "small":
            data = self._rng(name).standard_normal(shape) * 0.1
        else:
            raise ValueError(f"unknown init {init!r}")
        arr = tensor(data)
        self.tensors[name] = arr
        return arr

    def conv(self, name: str, out_c: int, in_c: int, kernel: Sequence[int],
             stride=1, padding=0, bias: bool = True, init: str = "he") -> ConvSpec:
        kernel = tuple(kernel)
        weight = self.get(f"{name}.weight", (out_c, in_c) + kernel, init)
        b = self.get(f"{name}.bias", (out_c,), "zeros") if bias else None
        return ConvSpec(weight, b, stride=stride, padding=padding)

    def bn(self, name: str, channels: int) -> BatchNormParams:
        return BatchNormParams(
            mean=self.get(f"{name}.mean", (channels,), "zeros"),
            var=self.get(f"{name}.var", (channels,), "ones"),
            gamma=self.get(f"{name}.gamma", (channels,), "ones"),
            beta=self.get(f"{name}.beta", (channels,), "zeros"),
            eps=self.bn_eps,
        )

    def names(self, prefix: str = "") -> Iterable[str]:
        return sorted(k for k in self.tensors if k.startswith(prefix))

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in self.names():
            fname = f"{name}.asft"
            asft.save(directory / fname, self.tensors[name])
            files[name] = fname
        manifest = {"format": "ASFT", "version": asft.VERSION, "seed": self.seed,
                    "bn_eps": self.bn_eps, "tensors": files}
        path = directory / MANIFEST
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, directory) -> "ParamStore":
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST).read_text())
        tensors = {name: asft.load(directory / fname) for name, fname in manifest["tensors"].items()}
        return cls(seed=manifest.get("seed", 0), tensors=tensors,
                   bn_eps=manifest.get("bn_eps", 1e-5))

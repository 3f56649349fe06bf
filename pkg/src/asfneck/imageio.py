"""Image decoding, letterboxing and PGM output."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError

PAD_VALUE = 0.5


def load_image(path) -> np.ndarray:
    """Decode an 8-bit PNG/PGM into an ``H x W x 3`` uint8 array (gray is replicated)."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if mode == "L":
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif mode != "RGB":
        raise ImageError(f"{path}: unsupported image mode {mode!r}; need 8-bit gray or RGB")
    return np.ascontiguousarray(arr, dtype=np.uint8)


@dataclass(frozen=True)
class Letterbox:
    scale: float
    pad_x: int
    pad_y: int
    orig_w: int
    orig_h: int
    size: int

    def to_original(self, boxes: np.ndarray) -> np.ndarray:
        """Map ``N x 4`` xyxy boxes from network input coordinates back to the source image."""
        b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
        b[:, 0::2] = np.clip((b[:, 0::2] - self.pad_x) / self.scale, 0, self.orig_w)
        b[:, 1::2] = np.clip((b[:, 1::2] - self.pad_y) / self.scale, 0, self.orig_h)
        return b

    def as_dict(self) -> dict:
        return asdict(self)


def letterbox(rgb: np.ndarray, size: int):
    """Aspect-preserving resize into a ``size x size`` canvas padded with 0.5 gray.

    Returns the ``1 x 3 x size x size`` float32 tensor (values / 255) and the
    ``Letterbox`` record needed to undo the transform.
    """
    h, w = rgb.shape[:2]
    scale = min(size / h, size / w)
    nw, nh = max(1, round(w * scale)), max(1, round(h * scale))
    if (nw, nh) != (w, h):
        channels = [
            np.asarray(Image.fromarray(rgb[:, :, c], mode="L").resize((nw, nh), Image.BILINEAR))
            for c in range(3)
        ]
        rgb = np.stack(channels, axis=2)
    pad_x, pad_y = (size - nw) // 2, (size - nh) // 2
    canvas = np.full((3, size, size), PAD_VALUE, dtype=np.float32)
    canvas[:, pad_y:pad_y + nh, pad_x:pad_x + nw] = rgb.transpose(2, 0, 1).astype(np.float32) / 255.0
    canvas.flags.writeable = False
    return canvas[None], Letterbox(scale, pad_x, pad_y, w, h, size)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2D uint8 array as binary PGM (P5)."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {image.shape}")
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def write_heatmap(path, values: np.ndarray) -> dict:
    """Min-max scale ``values`` to 0..255, write a PGM and a ``.json`` sidecar with the scaling."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    scaled = np.zeros_like(v) if span == 0 else (v - lo) / span * 255.0
    write_pgm(path, np.round(scaled).astype(np.uint8))
    meta = {"min": lo, "max": hi, "scale": 255.0 / span if span else 0.0,
            "shape": list(v.shape), "mapping": "pixel = round((value - min) * scale)"}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta

"""Grayscale image helpers: validation, PGM files, montages.

Images are plain 2D float arrays with values in [0, 1].  PGM (binary P5,
maxval 255) is the on-disk format for every exported picture; it is
self-describing and readable by any viewer.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the [0, 1] grayscale contract and return the array as float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D image, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("image contains non-finite pixels")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    return a


def to_unit_range(a: np.ndarray, flat_value: float = 0.5) -> np.ndarray:
    """Affinely rescale an array to span [0, 1].

    A constant input has no span to stretch; it maps to ``flat_value``.
    """
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.full_like(a, flat_value)
    return (a - lo) / (hi - lo)


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write a [0, 1] image as binary PGM (P5, maxval 255)."""
    a = validate_image(img)
    data = np.rint(a * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
        f.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM back into a [0, 1] float image."""
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(raw[m.end():], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def montage(tiles: np.ndarray, columns: int | None = None, pad: int = 1,
            normalize_each: bool = True) -> np.ndarray:
    """Lay out a stack of equally sized tiles ``(N, h, w)`` on one canvas."""
    tiles = np.asarray(tiles, dtype=np.float64)
    n, h, w = tiles.shape
    if columns is None:
        columns = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / columns))
    canvas = np.zeros((rows * (h + pad) + pad, columns * (w + pad) + pad))
    for i in range(n):
        tile = to_unit_range(tiles[i]) if normalize_each else np.clip(tiles[i], 0.0, 1.0)
        r, c = divmod(i, columns)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y:y + h, x:x + w] = tile
    return canvas

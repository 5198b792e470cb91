"""Minimal PFM (portable float map) reader/writer.

Grayscale maps only ("Pf" header). Scale is written as -1.0: negative
means little-endian payload. PFM stores rows bottom-to-top.
"""

from __future__ import annotations

import numpy as np


def write_pfm(path, data: np.ndarray, scale: float = -1.0) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("write_pfm expects a 2-D grayscale map")
    if scale >= 0:
        raise ValueError("only little-endian output is supported (scale < 0)")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(f"{scale:.1f}\n".encode("ascii"))
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimensions line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
        data = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float32), scale

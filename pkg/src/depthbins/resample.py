"""Deterministic numpy image resampling (half-pixel-center convention)."""

from __future__ import annotations

import numpy as np


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_nearest(arr: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D array (any dtype, incl. bool)."""
    h, w = arr.shape[:2]
    oh, ow = out_hw
    ri = np.clip(np.floor(_source_coords(oh, h) + 0.5), 0, h - 1).astype(np.intp)
    ci = np.clip(np.floor(_source_coords(ow, w) + 0.5), 0, w - 1).astype(np.intp)
    return arr[np.ix_(ri, ci)]


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of (H, W) or (H, W, C) float data."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, _ = img.shape
    oh, ow = out_hw

    ys = np.clip(_source_coords(oh, h), 0, h - 1)
    xs = np.clip(_source_coords(ow, w), 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out

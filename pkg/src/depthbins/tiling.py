"""Test-time tiled inference.

Input images are first downsampled to half size. If the downsampled
width exceeds the tile width, two tiles anchored at the left and right
edges cover it; their overlap is averaged in linear depth. Each tile
is zero-padded to the network input size, decoded to depth, and the
stitched result is bilinearly upsampled back to the original
resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from depthbins.model import DepthNet, model_forward
from depthbins.quantize import QuantizationSpec, decode_score_volume
from depthbins.resample import resize_bilinear


@dataclass(frozen=True)
class TilePlan:
    down_height: int
    down_width: int
    tiles: tuple          # column ranges [(lo, hi), ...] over the downsampled width
    net_height: int
    net_width: int

    @property
    def overlap_columns(self) -> tuple:
        """Column range covered by two tiles, or (0, 0) when there is none."""
        if len(self.tiles) < 2:
            return (0, 0)
        lo = self.tiles[1][0]
        hi = self.tiles[0][1]
        return (lo, hi) if hi > lo else (0, 0)

    @property
    def overlap_width(self) -> int:
        lo, hi = self.overlap_columns
        return hi - lo


def plan_tiles(height: int, width: int, tile_width: int,
               net_hw: tuple[int, int]) -> TilePlan:
    """Plan the half-downsample and width-wise split of one input image."""
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    net_h, net_w = net_hw
    if tile_width > net_w:
        raise ValueError(f"tile width {tile_width} exceeds network width {net_w}")
    dh = math.ceil(height / 2)
    dw = math.ceil(width / 2)
    if dh > net_h:
        raise ValueError(f"downsampled height {dh} exceeds network height {net_h}")
    if dw <= tile_width:
        tiles = ((0, dw),)
    elif dw <= 2 * tile_width:
        tiles = ((0, tile_width), (dw - tile_width, dw))
    else:
        raise ValueError(f"downsampled width {dw} cannot be covered by two "
                         f"{tile_width}-wide tiles")
    return TilePlan(down_height=dh, down_width=dw, tiles=tiles,
                    net_height=net_h, net_width=net_w)


def decode_output(out: torch.Tensor, head: str, spec: QuantizationSpec) -> np.ndarray:
    """Model output -> depth in meters at the output's own resolution."""
    arr = out.detach().cpu().numpy().astype(np.float64)
    if head == "classification":
        return decode_score_volume(arr, spec)
    w0, w1 = math.log10(spec.alpha), math.log10(spec.beta)
    return np.power(10.0, np.clip(arr[:, 0], w0, w1))


def _forward_tile(net: DepthNet, tile_rgb: np.ndarray, plan: TilePlan,
                  spec: QuantizationSpec) -> np.ndarray:
    h, w = tile_rgb.shape[:2]
    padded = np.zeros((plan.net_height, plan.net_width, 3), dtype=np.float64)
    padded[:h, :w] = tile_rgb
    x = np.ascontiguousarray(padded.transpose(2, 0, 1))[None]
    out, _ = model_forward(net, x, mode="eval")
    depth_net = resize_bilinear(decode_output(out, net.cfg.head, spec)[0],
                                (plan.net_height, plan.net_width))
    return depth_net[:h, :w]  # discard the padded region


def tiled_inference(net: DepthNet, rgb: np.ndarray, spec: QuantizationSpec,
                    tile_width: int, net_hw: tuple[int, int]) -> np.ndarray:
    """Predict a depth map at the input image's original resolution."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) RGB image")
    H, W = rgb.shape[:2]
    plan = plan_tiles(H, W, tile_width, net_hw)
    down = resize_bilinear(rgb, (plan.down_height, plan.down_width))

    acc = np.zeros((plan.down_height, plan.down_width))
    cnt = np.zeros(plan.down_width)
    for lo, hi in plan.tiles:
        acc[:, lo:hi] += _forward_tile(net, down[:, lo:hi], plan, spec)
        cnt[lo:hi] += 1
    stitched = acc / cnt[None, :]
    return resize_bilinear(stitched, (H, W))


def infer_image(net: DepthNet, rgb: np.ndarray, spec: QuantizationSpec,
                net_hw: tuple[int, int]) -> np.ndarray:
    """Single-tile reference path: half-downsample, pad, forward, decode, upsample.

    For images whose downsampled width fits one tile this matches
    tiled_inference bit for bit.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    H, W = rgb.shape[:2]
    net_h, net_w = net_hw
    dh, dw = math.ceil(H / 2), math.ceil(W / 2)
    if dh > net_h or dw > net_w:
        raise ValueError(f"downsampled size {dh}x{dw} exceeds network input {net_h}x{net_w}")
    down = resize_bilinear(rgb, (dh, dw))
    plan = TilePlan(down_height=dh, down_width=dw, tiles=((0, dw),),
                    net_height=net_h, net_width=net_w)
    depth = _forward_tile(net, down, plan, spec)
    return resize_bilinear(depth, (H, W))

"""Synthetic RGB-D scenes, folder adapters, and the training-time
augmentation pipeline.

The generators render analytic box-and-plane scenes with a pinhole
camera: indoor rooms (floor/ceiling/walls plus boxes, depth in
[0.4, 10] m) and outdoor road scenes (ground plane, horizon, box
obstacles, depth in [2.5, 80] m). They are pure functions of
(seed, height, width), bit-identical across calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from depthbins.pfm import read_pfm, write_pfm
from depthbins.resample import resize_bilinear, resize_nearest

INDOOR_DEPTH_RANGE = (0.4, 10.0)
OUTDOOR_DEPTH_RANGE = (2.5, 80.0)
SPARSE_VALID_FRACTION = 0.04  # of all pixels; stays under the 5% cap


class IngestionError(ValueError):
    """A dataset folder entry is missing or malformed."""


@dataclass
class SceneSample:
    rgb: np.ndarray      # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray    # (H, W) float32 meters
    valid: np.ndarray    # (H, W) bool
    domain: str          # "indoor" | "outdoor"
    id: str

    def __post_init__(self):
        if self.domain not in ("indoor", "outdoor"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.rgb.shape[:2] != self.depth.shape or self.depth.shape != self.valid.shape:
            raise ValueError("rgb/depth/valid shapes disagree")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def _camera_rays(height: int, width: int):
    f = 0.9 * width
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    xs = (np.arange(width) - cx) / f
    ys = (np.arange(height) - cy) / f
    return np.meshgrid(xs, ys), f


def _shade(albedo, normal, light, depth, noise, atten_scale):
    lambert = max(0.0, -float(np.dot(normal, light)))
    base = np.asarray(albedo) * (0.45 + 0.55 * lambert)
    atten = np.clip(1.15 - depth / atten_scale, 0.35, 1.0)
    return base[None, None, :] * atten[:, :, None] + noise


def generate_indoor(seed: int, height: int = 96, width: int = 128) -> SceneSample:
    """Procedural room: floor/ceiling/back-wall/side-wall planes and 1-4 boxes."""
    rng = np.random.default_rng([int(seed), 101])
    (xn, yn), _ = _camera_rays(height, width)

    floor_y = rng.uniform(0.9, 1.5)
    ceil_y = rng.uniform(0.9, 1.5)
    wall_x = rng.uniform(1.2, 2.5)
    back_z = rng.uniform(4.0, 9.5)

    with np.errstate(divide="ignore"):
        t_floor = np.where(yn > 1e-9, floor_y / yn, np.inf)
        t_ceil = np.where(yn < -1e-9, ceil_y / (-yn), np.inf)
        t_left = np.where(xn < -1e-9, wall_x / (-xn), np.inf)
        t_right = np.where(xn > 1e-9, wall_x / xn, np.inf)
    t_back = np.full_like(xn, back_z)

    planes = np.stack([t_floor, t_ceil, t_left, t_right, t_back])
    surface = np.argmin(planes, axis=0)
    depth = planes.min(axis=0)

    normals = np.array([
        [0.0, -1.0, 0.0],   # floor
        [0.0, 1.0, 0.0],    # ceiling
        [1.0, 0.0, 0.0],    # left wall
        [-1.0, 0.0, 0.0],   # right wall
        [0.0, 0.0, -1.0],   # back wall
    ])
    light = np.array([0.3, 0.8, 0.52])
    light /= np.linalg.norm(light)

    albedos = rng.uniform(0.25, 0.9, size=(5, 3))
    noise = rng.normal(0.0, 0.02, size=(height, width, 1))
    rgb = np.zeros((height, width, 3))
    for s in range(5):
        sel = surface == s
        shaded = _shade(albedos[s], normals[s], light, depth, noise, atten_scale=14.0)
        rgb[sel] = shaded[sel]

    for _ in range(rng.integers(1, 5)):
        z0 = rng.uniform(1.2, back_z - 0.8)
        xc = rng.uniform(-0.8 * wall_x, 0.8 * wall_x)
        half_w = rng.uniform(0.15, 0.6)
        h_box = rng.uniform(0.3, 1.2)
        albedo = rng.uniform(0.25, 0.9, size=3)
        px = xn * z0
        py = yn * z0
        face = (np.abs(px - xc) <= half_w) & (py <= floor_y) & (py >= floor_y - h_box)
        hit = face & (z0 < depth)
        depth[hit] = z0
        shaded = _shade(albedo, normals[4], light, depth, noise, atten_scale=14.0)
        rgb[hit] = shaded[hit]

    depth = np.clip(depth, *INDOOR_DEPTH_RANGE)
    return SceneSample(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        depth=depth.astype(np.float32),
        valid=np.ones((height, width), dtype=bool),
        domain="indoor",
        id=f"indoor_{seed:08d}",
    )


def generate_outdoor(seed: int, height: int = 96, width: int = 128,
                     sparse: bool = False) -> SceneSample:
    """Procedural road scene: ground plane to the horizon plus 0-4 box obstacles.

    Sky and beyond-range ground pixels are invalid. With sparse=True at
    most SPARSE_VALID_FRACTION of all pixels stay valid, mimicking a
    LiDAR-style sparse depth map.
    """
    rng = np.random.default_rng([int(seed), 202])
    (xn, yn), _ = _camera_rays(height, width)

    cam_h = rng.uniform(1.4, 1.8)
    pitch = rng.uniform(-0.02, 0.02)
    yg = yn + pitch

    with np.errstate(divide="ignore"):
        ground_z = np.where(yg > 1e-6, cam_h / np.maximum(yg, 1e-6), np.inf)
    depth = np.where(yg > 1e-6, ground_z, np.inf)
    valid = depth <= OUTDOOR_DEPTH_RANGE[1]

    sky = np.array([0.55, 0.70, 0.92])
    grad = np.clip((yn - yn.min()) / (np.ptp(yn) + 1e-9), 0, 1)[:, :, None]
    rgb = sky[None, None, :] * (1.0 - 0.35 * grad)

    ground_albedo = rng.uniform([0.25, 0.3, 0.2], [0.45, 0.55, 0.35])
    road_albedo = rng.uniform(0.3, 0.45) * np.ones(3)
    road_half_width = rng.uniform(2.0, 4.0)
    noise = rng.normal(0.0, 0.02, size=(height, width, 1))
    on_ground = np.isfinite(ground_z)
    lateral = np.where(on_ground, xn * np.where(on_ground, ground_z, 0.0), 0.0)
    is_road = on_ground & (np.abs(lateral) <= road_half_width)
    shade = np.clip(1.1 - np.where(on_ground, ground_z, 0.0) / 90.0, 0.4, 1.0)[:, :, None]
    ground_rgb = np.where(is_road[:, :, None], road_albedo, ground_albedo) * shade + noise
    rgb = np.where(on_ground[:, :, None], ground_rgb, rgb)

    light = np.array([0.25, 0.85, 0.47])
    light /= np.linalg.norm(light)
    for _ in range(rng.integers(0, 5)):
        z0 = rng.uniform(6.0, 60.0)
        xc = rng.uniform(-7.0, 7.0)
        half_w = rng.uniform(0.4, 1.5)
        h_box = rng.uniform(0.8, 3.0)
        albedo = rng.uniform(0.2, 0.85, size=3)
        px = xn * z0
        py = yg * z0
        face = (np.abs(px - xc) <= half_w) & (py <= cam_h) & (py >= cam_h - h_box)
        hit = face & (z0 < depth)
        depth[hit] = z0
        valid[hit] = True
        shaded = _shade(albedo, np.array([0.0, 0.0, -1.0]), light, depth, noise, atten_scale=95.0)
        rgb[hit] = shaded[hit]

    depth = np.where(valid, np.clip(depth, *OUTDOOR_DEPTH_RANGE), OUTDOOR_DEPTH_RANGE[1])

    if sparse:
        keep = int(SPARSE_VALID_FRACTION * height * width)
        flat_idx = np.flatnonzero(valid)
        if flat_idx.size > keep:
            chosen = rng.choice(flat_idx, size=keep, replace=False)
            sparse_valid = np.zeros(valid.size, dtype=bool)
            sparse_valid[chosen] = True
            valid = sparse_valid.reshape(valid.shape)

    return SceneSample(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        depth=depth.astype(np.float32),
        valid=valid,
        domain="outdoor",
        id=f"outdoor_{seed:08d}",
    )


def generate_set(domain: str, count: int, seed: int, height: int = 96,
                 width: int = 128, sparse: bool = False) -> list[SceneSample]:
    """Generate `count` samples with consecutive per-sample seeds."""
    if domain == "indoor":
        return [generate_indoor(seed + i, height, width) for i in range(count)]
    if domain == "outdoor":
        return [generate_outdoor(seed + i, height, width, sparse=sparse) for i in range(count)]
    raise ValueError(f"unknown domain {domain!r}")


# ---------------------------------------------------------------------------
# Preprocessing / augmentation


@dataclass(frozen=True)
class TargetGeometry:
    """Resize/crop/pad plan taking raw samples to the network input size."""

    net_height: int
    net_width: int
    indoor_resize: tuple[int, int]
    outdoor_resize: tuple[int, int]
    crop_width: int

    def __post_init__(self):
        if self.net_height % 32 or self.net_width % 32:
            raise ValueError("network geometry must be divisible by 32")
        object.__setattr__(self, "indoor_resize", tuple(self.indoor_resize))
        object.__setattr__(self, "outdoor_resize", tuple(self.outdoor_resize))

    @classmethod
    def full(cls) -> "TargetGeometry":
        return cls(net_height=256, net_width=320, indoor_resize=(240, 320),
                   outdoor_resize=(182, 612), crop_width=320)

    @classmethod
    def toy(cls) -> "TargetGeometry":
        return cls(net_height=96, net_width=128, indoor_resize=(90, 128),
                   outdoor_resize=(68, 230), crop_width=128)


def preprocess_train(sample: SceneSample, geometry: TargetGeometry,
                     rng: np.random.Generator | None = None,
                     flip: bool | None = None,
                     scale: float | None = None) -> SceneSample:
    """Resize, randomly flip/scale, width-crop and zero-pad to the net size.

    flip/scale override the random draws when given (used by tests and
    by deterministic evaluation). Depth is divided by the applied image
    scale so the geometry stays metrically consistent; padded pixels
    are marked invalid.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    rh, rw = geometry.indoor_resize if sample.domain == "indoor" else geometry.outdoor_resize

    rgb = resize_bilinear(sample.rgb, (rh, rw))
    depth = resize_nearest(sample.depth, (rh, rw)).astype(np.float64)
    valid = resize_nearest(sample.valid, (rh, rw))

    if flip is None:
        flip = bool(rng.random() < 0.5)
    if flip:
        rgb, depth, valid = rgb[:, ::-1], depth[:, ::-1], valid[:, ::-1]

    if scale is None:
        scale = float(rng.uniform(0.9, 1.1))
    if scale != 1.0:
        sh, sw = max(1, round(rh * scale)), max(1, round(rw * scale))
        rgb = resize_bilinear(rgb, (sh, sw))
        depth = resize_nearest(depth, (sh, sw))
        valid = resize_nearest(valid, (sh, sw))
        depth = depth / scale

    h, w = depth.shape
    crop_w = min(geometry.crop_width, geometry.net_width)
    if w > crop_w:
        off = int(rng.integers(0, w - crop_w + 1))
        rgb, depth, valid = rgb[:, off:off + crop_w], depth[:, off:off + crop_w], valid[:, off:off + crop_w]
    if h > geometry.net_height:
        off = int(rng.integers(0, h - geometry.net_height + 1))
        rgb = rgb[off:off + geometry.net_height]
        depth = depth[off:off + geometry.net_height]
        valid = valid[off:off + geometry.net_height]

    h, w = depth.shape
    pad_h, pad_w = geometry.net_height - h, geometry.net_width - w
    if pad_h < 0 or pad_w < 0:
        raise ValueError(f"{h}x{w} sample does not fit {geometry.net_height}x{geometry.net_width} target")
    rgb = np.pad(rgb, ((0, pad_h), (0, pad_w), (0, 0)))
    depth = np.pad(depth, ((0, pad_h), (0, pad_w)))
    valid = np.pad(valid, ((0, pad_h), (0, pad_w)))  # padding stays invalid

    # depth must stay positive at valid pixels; resizing cannot break that,
    # but scale division keeps values finite so a plain cast suffices
    return SceneSample(
        rgb=np.ascontiguousarray(rgb, dtype=np.float32),
        depth=np.ascontiguousarray(depth, dtype=np.float32),
        valid=np.ascontiguousarray(valid),
        domain=sample.domain,
        id=sample.id,
    )


def shuffled_batches(samples, batch_size: int, seed) -> list[list]:
    """One epoch: a seeded shuffle of `samples` cut into batches."""
    if not samples:
        raise ValueError("empty sample set")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    return [[samples[i] for i in order[k:k + batch_size]]
            for k in range(0, len(order), batch_size)]


def mixed_batch_sampler(indoor_set, outdoor_set, batch_size: int, seed) -> list[list]:
    """Seeded shuffle of the union of both domains, cut into batches.

    Every sample appears exactly once per epoch, so the domain ratio of
    the stream matches the ratio of the set sizes.
    """
    if not indoor_set or not outdoor_set:
        raise ValueError("both domain sets must be non-empty")
    return shuffled_batches(list(indoor_set) + list(outdoor_set), batch_size, seed)


# ---------------------------------------------------------------------------
# Folder datasets: <root>/<id>.rgb.png + <id>.depth.pfm


def write_sample(sample: SceneSample, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray((np.clip(sample.rgb, 0, 1) * 255).round().astype(np.uint8))
    img.save(root / f"{sample.id}.rgb.png")
    depth = np.where(sample.valid, sample.depth, 0.0).astype(np.float32)
    write_pfm(root / f"{sample.id}.depth.pfm", depth)


def load_folder_dataset(path, domain: str) -> list[SceneSample]:
    """Load <id>.rgb.png / <id>.depth.pfm pairs; non-positive depth is invalid.

    Samples without a single valid depth pixel are rejected (skipped).
    """
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"dataset folder not found: {root}")
    samples = []
    for rgb_path in sorted(root.glob("*.rgb.png")):
        sample_id = rgb_path.name[:-len(".rgb.png")]
        depth_path = root / f"{sample_id}.depth.pfm"
        if not depth_path.exists():
            raise IngestionError(f"missing depth file {depth_path}")
        try:
            rgb = np.asarray(Image.open(rgb_path).convert("RGB"), dtype=np.float32) / 255.0
            depth, _ = read_pfm(depth_path)
        except (OSError, ValueError) as exc:
            raise IngestionError(f"malformed file near {rgb_path}: {exc}") from exc
        if rgb.shape[:2] != depth.shape:
            raise IngestionError(f"{rgb_path} and {depth_path} have different sizes")
        valid = depth > 0
        if not valid.any():
            continue
        samples.append(SceneSample(rgb=rgb, depth=depth, valid=valid,
                                   domain=domain, id=sample_id))
    return samples

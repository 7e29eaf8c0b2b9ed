"""Procedural driving-like scenes standing in for real RGB + LiDAR captures.

A scene is a ground plane, a fronto-parallel back wall and a few floating
fronto-parallel boxes. Ground truth holds the nearest surface per pixel
center ray; the sparse map keeps every ``scanline_period``-th row with
random per-point dropout, mimicking the line structure of a spinning LiDAR.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .fileio import (
    read_calibration,
    read_depth_pgm,
    read_rgb_ppm,
    write_calibration,
    write_depth_pgm,
    write_rgb_ppm,
)
from .geometry import CameraIntrinsics, DepthImage, round_half_up

CAMERA_HEIGHT = 1.6


@dataclass(frozen=True)
class SceneConfig:
    width: int = 96
    height: int = 64
    z_min: float = 2.0
    z_max: float = 40.0
    n_boxes: int = 3
    scanline_period: int = 4
    dropout: float | None = None
    target_density: float = 0.04

    def __post_init__(self):
        if self.width % 16 or self.height % 16 or self.width <= 0 or self.height <= 0:
            raise DimensionError(
                f"scene extents must be positive multiples of 16, got {self.width}x{self.height}"
            )
        if not 0 < self.z_min < self.z_max:
            raise ValueError(f"need 0 < z_min < z_max, got {self.z_min}, {self.z_max}")
        if self.scanline_period < 1:
            raise ValueError("scanline_period must be >= 1")

    @property
    def keep_probability(self) -> float:
        if self.dropout is not None:
            return 1.0 - self.dropout
        return min(1.0, self.target_density * self.scanline_period)

    def intrinsics(self) -> CameraIntrinsics:
        f = 0.8 * self.width
        return CameraIntrinsics(f, f, (self.width - 1) / 2, (self.height - 1) / 2, self.width, self.height)


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle at constant depth, in camera coordinates."""

    x0: float
    x1: float
    y0: float
    y1: float
    z: float


@dataclass
class SceneSample:
    rgb: np.ndarray
    sparse: DepthImage
    gt: DepthImage
    K: CameraIntrinsics
    seed: int


@dataclass(frozen=True)
class SceneLayout:
    wall_depth: float
    boxes: tuple[Box, ...]
    albedo: np.ndarray


def _quantize_mm(z: np.ndarray) -> np.ndarray:
    return round_half_up(z * 1000.0) / 1000.0


def sample_layout(config: SceneConfig, rng: np.random.Generator) -> SceneLayout:
    K = config.intrinsics()
    wall = rng.uniform(0.6, 0.95) * config.z_max
    boxes = []
    for _ in range(config.n_boxes):
        z = rng.uniform(config.z_min + 1.0, max(config.z_min + 1.5, 0.5 * config.z_max))
        w_px = rng.uniform(0.12, 0.35) * config.width
        h_px = rng.uniform(0.15, 0.45) * config.height
        u0 = rng.uniform(-0.1 * config.width, config.width - 0.5 * w_px)
        v0 = rng.uniform(0.1 * config.height, config.height - 0.4 * h_px)
        x0 = (u0 - K.cx) * z / K.fx
        y0 = (v0 - K.cy) * z / K.fy
        boxes.append(Box(x0, x0 + w_px * z / K.fx, y0, y0 + h_px * z / K.fy, z))
    albedo = rng.uniform(0.2, 1.0, size=(2 + config.n_boxes, 3))
    return SceneLayout(wall, tuple(boxes), albedo)


def surface_depths(config: SceneConfig, layout: SceneLayout) -> np.ndarray:
    """Per-surface ray depth at every pixel center, ``inf`` where the ray misses.

    Surface order: ground, wall, boxes.
    """
    K = config.intrinsics()
    v, u = np.mgrid[0 : config.height, 0 : config.width].astype(np.float64)
    rx = (u - K.cx) / K.fx
    ry = (v - K.cy) / K.fy
    layers = []
    with np.errstate(divide="ignore"):
        ground = np.where(ry > 0, CAMERA_HEIGHT / ry, np.inf)
    layers.append(ground)
    layers.append(np.full(u.shape, layout.wall_depth))
    for b in layout.boxes:
        x, y = rx * b.z, ry * b.z
        hit = (x >= b.x0) & (x <= b.x1) & (y >= b.y0) & (y <= b.y1)
        layers.append(np.where(hit, b.z, np.inf))
    return np.stack(layers)


def generate_scene(config: SceneConfig, seed: int) -> SceneSample:
    rng = np.random.default_rng(seed)
    layout = sample_layout(config, rng)
    layers = surface_depths(config, layout)
    owner = np.argmin(layers, axis=0)
    depth = np.take_along_axis(layers, owner[None], axis=0)[0]
    gt = _quantize_mm(np.clip(depth, config.z_min, config.z_max))

    shade = 0.35 + 0.65 * (1.0 - gt / config.z_max)
    rgb = layout.albedo[owner].transpose(2, 0, 1) * shade[None]
    # faint ground texture so color carries more than a flat patch
    v, u = np.mgrid[0 : config.height, 0 : config.width]
    stripes = 0.08 * ((u // 6 + v // 3) % 2)
    rgb = np.clip(rgb + np.where(owner == 0, stripes, 0.0)[None], 0.0, 1.0)

    sparse = np.zeros_like(gt)
    phase = int(rng.integers(config.scanline_period))
    rows = np.arange(phase, config.height, config.scanline_period)
    keep = rng.random((len(rows), config.width)) < config.keep_probability
    sparse[rows] = np.where(keep, gt[rows], 0.0)
    return SceneSample(rgb, DepthImage(sparse), DepthImage(gt), config.intrinsics(), seed)


def scene_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)]


def generate_dataset(config: SceneConfig, count: int, seed: int) -> list[SceneSample]:
    return [generate_scene(config, s) for s in scene_seeds(seed, count)]


SAMPLE_FILES = ("rgb.ppm", "sparse.pgm", "gt.pgm", "calib.txt")


def write_sample(dir_path, sample: SceneSample) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    write_rgb_ppm(d / "rgb.ppm", sample.rgb)
    write_depth_pgm(d / "sparse.pgm", sample.sparse)
    write_depth_pgm(d / "gt.pgm", sample.gt)
    write_calibration(d / "calib.txt", sample.K)


def read_sample(dir_path, seed: int = -1) -> SceneSample:
    d = Path(dir_path)
    K = read_calibration(d / "calib.txt")
    rgb = read_rgb_ppm(d / "rgb.ppm")
    sparse = read_depth_pgm(d / "sparse.pgm")
    gt_path = d / "gt.pgm"
    gt = read_depth_pgm(gt_path) if gt_path.exists() else DepthImage.empty(K.height, K.width)
    for name, shape in (("rgb.ppm", rgb.shape[1:]), ("sparse.pgm", sparse.values.shape), ("gt.pgm", gt.values.shape)):
        if shape != (K.height, K.width):
            raise DimensionError(f"{d / name}: extents {shape[::-1]} disagree with calib.txt")
    return SceneSample(rgb, sparse, gt, K, seed)


def config_dict(config: SceneConfig) -> dict:
    return asdict(config)

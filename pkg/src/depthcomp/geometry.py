"""Pinhole camera model: depth image <-> point cloud, z-buffered splatting, sub-sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image extents must be positive, got {self.width}x{self.height}")


@dataclass
class DepthImage:
    """Depth in meters on an H x W grid; 0 marks a missing measurement."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"depth image must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("depth values must be finite and non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values))

    @classmethod
    def empty(cls, height: int, width: int) -> "DepthImage":
        return cls(np.zeros((height, width)))


@dataclass
class PointCloud:
    """``N x 3`` points in the camera frame (x right, y down, z forward), meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionError(f"point cloud must be N x 3, got shape {pts.shape}")
        self.points = np.ascontiguousarray(pts)

    def __len__(self) -> int:
        return self.points.shape[0]


class Projection(NamedTuple):
    depth: DepthImage
    dropped_behind: int
    dropped_outside: int


def _check_extents(depth: DepthImage, K: CameraIntrinsics) -> None:
    if (depth.height, depth.width) != (K.height, K.width):
        raise DimensionError(
            f"depth image is {depth.width}x{depth.height} but intrinsics expect {K.width}x{K.height}"
        )


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def unproject(depth: DepthImage, K: CameraIntrinsics) -> PointCloud:
    """Back-project every valid pixel; points come out in row-major pixel order."""
    _check_extents(depth, K)
    v, u = np.nonzero(depth.values > 0)
    d = depth.values[v, u]
    x = (u - K.cx) * d / K.fx
    y = (v - K.cy) * d / K.fy
    return PointCloud(np.stack([x, y, d], axis=1))


def project_zbuffer(cloud: PointCloud, K: CameraIntrinsics) -> Projection:
    """Splat each point onto its nearest pixel, keeping the closest depth per pixel."""
    pts = cloud.points
    front = pts[:, 2] > 0
    pts = pts[front]
    z = pts[:, 2]
    u = round_half_up(K.fx * pts[:, 0] / z + K.cx)
    v = round_half_up(K.fy * pts[:, 1] / z + K.cy)
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    flat = v[inside].astype(np.int64) * K.width + u[inside].astype(np.int64)
    buf = np.full(K.height * K.width, np.inf)
    np.minimum.at(buf, flat, z[inside])
    buf[np.isinf(buf)] = 0.0
    return Projection(
        DepthImage(buf.reshape(K.height, K.width)),
        dropped_behind=int(np.count_nonzero(~front)),
        dropped_outside=int(np.count_nonzero(~inside)),
    )


def subsample(depth: DepthImage, keep_ratio: float, seed: int) -> DepthImage:
    """Keep a uniformly random ``round(valid * keep_ratio)`` subset of valid pixels."""
    if not 0 < keep_ratio <= 1:
        raise ValueError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")
    if keep_ratio == 1:
        return DepthImage(depth.values.copy())
    valid = np.flatnonzero(depth.values)
    n_keep = int(round_half_up(valid.size * keep_ratio))
    rng = np.random.default_rng(seed)
    keep = rng.choice(valid, size=n_keep, replace=False)
    out = np.zeros(depth.values.size)
    out[keep] = depth.values.reshape(-1)[keep]
    return DepthImage(out.reshape(depth.values.shape))

"""Point-cloud completion: every sparse point becomes a landmark that emits an s x s patch.

A per-point MLP followed by max pooling gives a global feature. Each
landmark is paired with every seed of a fixed s x s lattice; a shared MLP
maps ``[global feature, landmark, seed]`` to an offset added to the landmark.
Coordinates enter the network divided by ``coord_scale`` and offsets leave it
multiplied by the same factor, so layer activations stay O(1) for scenes tens
of meters deep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError
from .geometry import PointCloud
from .nn import ParamSet, add_linear
from .tensor import (
    Tensor,
    broadcast_rows,
    concat,
    linear,
    maxpool_points,
    mul,
    no_grad,
    relu,
    add,
)

# incremented on every forward; lets callers assert a pipeline never ran the net
CALLS = {"lcn_forward": 0}


@dataclass(frozen=True)
class LcnConfig:
    pointnet_hidden: tuple[int, ...] = (64, 128)
    global_dim: int = 256
    decoder_hidden: tuple[int, ...] = (128, 64)
    patch_side: int = 2
    grid_extent: float = 0.5
    coord_scale: float = 50.0
    output_init_scale: float = 0.01

    def __post_init__(self):
        if self.patch_side < 1:
            raise ValueError(f"patch_side must be >= 1, got {self.patch_side}")
        if self.coord_scale <= 0:
            raise ValueError("coord_scale must be positive")

    @property
    def pointnet_dims(self) -> tuple[int, ...]:
        return (3, *self.pointnet_hidden, self.global_dim)

    @property
    def decoder_dims(self) -> tuple[int, ...]:
        return (self.global_dim + 3 + 2, *self.decoder_hidden, 3)

    @property
    def densification(self) -> int:
        return self.patch_side**2

    @classmethod
    def paper_scale(cls, **kw) -> "LcnConfig":
        return cls(global_dim=1024, **kw)

    def to_dict(self) -> dict:
        return {
            "pointnet_hidden": list(self.pointnet_hidden),
            "global_dim": self.global_dim,
            "decoder_hidden": list(self.decoder_hidden),
            "patch_side": self.patch_side,
            "grid_extent": self.grid_extent,
            "coord_scale": self.coord_scale,
            "output_init_scale": self.output_init_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LcnConfig":
        d = dict(d)
        d["pointnet_hidden"] = tuple(d["pointnet_hidden"])
        d["decoder_hidden"] = tuple(d["decoder_hidden"])
        return cls(**d)


@dataclass
class LcnParams:
    config: LcnConfig
    tensors: ParamSet = field(default_factory=ParamSet)


def _layer_sizes(dims):
    return list(zip(dims[:-1], dims[1:]))


def lcn_param_count(config: LcnConfig) -> int:
    layers = _layer_sizes(config.pointnet_dims) + _layer_sizes(config.decoder_dims)
    return sum(i * o + o for i, o in layers)


def init_lcn(config: LcnConfig, seed: int) -> LcnParams:
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    for i, (n_in, n_out) in enumerate(_layer_sizes(config.pointnet_dims)):
        add_linear(ps, rng, f"encoder.{i}", n_in, n_out)
    dec = _layer_sizes(config.decoder_dims)
    for i, (n_in, n_out) in enumerate(dec):
        add_linear(ps, rng, f"decoder.{i}", n_in, n_out)
    ps[f"decoder.{len(dec) - 1}.weight"].data *= config.output_init_scale
    return LcnParams(config, ps)


def folding_grid(patch_side: int, extent: float) -> np.ndarray:
    """The s*s lattice seeds over [-extent, extent]^2, row-major."""
    if patch_side == 1:
        return np.zeros((1, 2))
    ticks = np.linspace(-extent, extent, patch_side)
    a, b = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([a.reshape(-1), b.reshape(-1)], axis=1)


def lcn_forward(params: LcnParams, sparse) -> Tensor:
    """Dense ``(N * s^2) x 3`` cloud; rows ``i*s^2 .. (i+1)*s^2 - 1`` belong to landmark ``i``."""
    CALLS["lcn_forward"] += 1
    cfg = params.config
    ps = params.tensors
    pts = sparse.points if isinstance(sparse, PointCloud) else np.asarray(sparse, dtype=np.float64)
    n = len(pts)
    if n == 0:
        raise EmptyInputError("lcn_forward needs at least one input point")
    k = cfg.densification
    scaled = Tensor(pts / cfg.coord_scale)

    h = scaled
    n_enc = len(cfg.pointnet_dims) - 1
    for i in range(n_enc):
        h = relu(linear(h, ps[f"encoder.{i}.weight"], ps[f"encoder.{i}.bias"]))
    g = maxpool_points(h)

    grid = folding_grid(cfg.patch_side, cfg.grid_extent)
    seeds = Tensor(np.tile(grid, (n, 1)))
    local = Tensor(np.repeat(scaled.data, k, axis=0))
    x = concat([broadcast_rows(g, n * k), local, seeds], axis=1)
    n_dec = len(cfg.decoder_dims) - 1
    for i in range(n_dec):
        x = linear(x, ps[f"decoder.{i}.weight"], ps[f"decoder.{i}.bias"])
        if i < n_dec - 1:
            x = relu(x)
    offsets = mul(x, cfg.coord_scale)
    return add(Tensor(np.repeat(pts, k, axis=0)), offsets)


def lcn_complete(params: LcnParams, sparse: PointCloud) -> PointCloud:
    """Inference-only densification; an empty input yields an empty cloud."""
    if len(sparse) == 0:
        return PointCloud(np.zeros((0, 3)))
    with no_grad():
        return PointCloud(lcn_forward(params, sparse).data)

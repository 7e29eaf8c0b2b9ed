"""Finite-difference sweeps over every differentiable op and both networks."""

from __future__ import annotations

import numpy as np

from .chamfer import chamfer_grad
from .dcn import DcnConfig, dcn_forward, init_dcn
from .lcn import LcnConfig, init_lcn, lcn_forward
from .tensor import (
    Tensor,
    add,
    broadcast_rows,
    concat,
    conv2d,
    grad_check,
    matmul,
    maxpool_points,
    mse_masked,
    mul,
    relu,
    repeat_rows,
    tensor_sum,
    upsample_nearest2x,
)


def _rand(rng, *shape):
    return Tensor(rng.uniform(-2, 2, size=shape), requires_grad=True)


def _mask(shape):
    return (np.arange(int(np.prod(shape))) % 3 != 0).reshape(shape)


OPS = {
    "matmul": lambda r: ((_rand(r, 3, 4), _rand(r, 4, 2)), matmul),
    "add": lambda r: ((_rand(r, 3, 4), _rand(r, 4)), add),
    "mul": lambda r: ((_rand(r, 3, 4), _rand(r, 3, 4)), mul),
    "relu": lambda r: ((_rand(r, 5, 4),), relu),
    "conv2d_3x3_s1": lambda r: ((_rand(r, 2, 5, 6), _rand(r, 3, 2, 3, 3), _rand(r, 3)),
                                lambda x, k, b: conv2d(x, k, b, 1)),
    "conv2d_3x3_s2": lambda r: ((_rand(r, 2, 5, 6), _rand(r, 3, 2, 3, 3), _rand(r, 3)),
                                lambda x, k, b: conv2d(x, k, b, 2)),
    "conv2d_1x1_s2": lambda r: ((_rand(r, 2, 4, 5), _rand(r, 3, 2, 1, 1), _rand(r, 3)),
                                lambda x, k, b: conv2d(x, k, b, 2)),
    "upsample_nearest2x": lambda r: ((_rand(r, 2, 3, 4),), upsample_nearest2x),
    "maxpool_points": lambda r: ((_rand(r, 6, 4),), maxpool_points),
    "concat": lambda r: ((_rand(r, 2, 3), _rand(r, 2, 5)), lambda a, b: concat([a, b], axis=1)),
    "repeat_rows": lambda r: ((_rand(r, 3, 2),), lambda a: repeat_rows(a, 4)),
    "broadcast_rows": lambda r: ((_rand(r, 3),), lambda a: broadcast_rows(a, 5)),
    "mse_masked": lambda r: ((_rand(r, 1, 4, 4), _rand(r, 1, 4, 4)),
                             lambda a, b: mse_masked(a, b, _mask((1, 4, 4)))),
    "chamfer_grad": lambda r: _chamfer_case(r),
}


def _chamfer_case(rng):
    target = rng.uniform(-2, 2, (10, 3))
    return (_rand(rng, 10, 3),), lambda a: chamfer_grad(a, target)


def check_op(name: str, trials: int = 10, seed: int = 0) -> float:
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial, len(name)])
        inputs, op = OPS[name](rng)
        out = op(*inputs)
        if out.data.size == 1:
            f = lambda: op(*inputs)
        else:
            readout = Tensor(rng.normal(size=out.shape))
            f = lambda: tensor_sum(mul(op(*inputs), readout))
        worst = max(worst, grad_check(f, inputs, eps=1e-5))
    return worst


def check_lcn_chamfer(seed: int = 0, n_points: int = 20) -> float:
    """Gradient of Chamfer(lcn(sparse), gt) with respect to every LCN parameter."""
    rng = np.random.default_rng(seed)
    cfg = LcnConfig(pointnet_hidden=(8,), global_dim=8, decoder_hidden=(8,), coord_scale=5.0,
                    output_init_scale=1.0)
    params = init_lcn(cfg, seed)
    sparse = rng.uniform(-2, 2, (n_points, 3)) + [0, 0, 6]
    gt = rng.uniform(-2, 2, (3 * n_points, 3)) + [0, 0, 6]
    f = lambda: chamfer_grad(lcn_forward(params, sparse), gt)
    return grad_check(f, [t for _, t in params.tensors.items()], eps=1e-5)


def check_dcn_mse(seed: int = 0, size: int = 16, max_coords: int = 3, eps: float = 1e-5) -> float:
    """Gradient of masked MSE through a base-2 two-pathway net on a 16x16 input.

    Init scaling is disabled so every branch carries gradient of ordinary size,
    and biases are randomized: with zero biases, channels fed by all-zero
    activations sit exactly on a ReLU kink where no derivative exists. A bias nudge
    moves every pixel of a channel, so on unlucky seeds it can still straddle
    a near-zero pre-activation; a smaller ``eps`` separates that from a bug.
    """
    rng = np.random.default_rng(seed)
    cfg = DcnConfig(base_channels=2, residual_init_scale=1.0, output_init_scale=1.0)
    params = init_dcn(cfg, seed)
    for name, t in params.tensors.items():
        if name.endswith(".bias"):
            t.data[...] = rng.uniform(-0.1, 0.1, t.shape)
    dual = rng.uniform(0, 1, (2, size, size))
    rgbd = rng.uniform(0, 1, (4, size, size))
    target = rng.uniform(0, 1, (1, size, size))
    mask = rng.random((1, size, size)) < 0.7
    f = lambda: mse_masked(dcn_forward(params, dual, rgbd), target, mask)
    return grad_check(f, [t for _, t in params.tensors.items()], eps=eps, max_coords=max_coords, seed=seed)


def run_all(trials: int = 10, seed: int = 0) -> dict[str, float]:
    results = {name: check_op(name, trials, seed) for name in OPS}
    results["lcn+chamfer"] = check_lcn_chamfer(seed)
    results["dcn+mse_masked"] = check_dcn_mse(seed)
    return results

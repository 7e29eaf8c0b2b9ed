"""Two-stage schedule: fit the point-cloud net on Chamfer loss, freeze it, then
fit the image net on masked MSE. Also the inference pipeline and ablation harness."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .chamfer import chamfer_bruteforce, chamfer_grad
from .dcn import (
    DcnConfig,
    DcnParams,
    check_extents,
    concat_forward,
    dcn_forward,
    init_concat_net,
    init_dcn,
    matched_concat_config,
)
from .errors import ConfigError, DimensionError
from .geometry import DepthImage, PointCloud, project_zbuffer, subsample, unproject
from .lcn import LcnConfig, LcnParams, init_lcn, lcn_complete, lcn_forward
from .metrics import MetricsReport, evaluate, mean_report
from .nn import ParamSet
from .synthetic import SceneSample
from .tensor import Tensor, mse_masked, mul, no_grad

log = logging.getLogger(__name__)

VARIANTS = ("full", "model1", "model2")
# smallest depth the 16-bit millimeter export can represent
MIN_EXPORT_DEPTH = 0.001


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    stage1_epochs: int = 1
    stage2_epochs: int = 11
    stage1_halving_steps: int = 2000
    stage2_halving_epochs: int = 5
    batch_size: int = 1
    max_depth: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lr0", "adam_eps", "max_depth"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        for name in ("stage1_epochs", "stage2_epochs", "stage1_halving_steps", "stage2_halving_epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


def stage1_lr(config: TrainConfig, step: int) -> float:
    return config.lr0 * 0.5 ** (step // config.stage1_halving_steps)


def stage2_lr(config: TrainConfig, epoch: int) -> float:
    return config.lr0 * 0.5 ** (epoch // config.stage2_halving_epochs)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update, in place on the ``params`` arrays.

    Parameters without a gradient entry are left untouched, as is their state.
    """
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise DimensionError(f"optimizer state for {name!r} does not match shape {p.shape}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, g in grads.items():
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def adam_update(ps: ParamSet, state: AdamState, lr: float, config: TrainConfig) -> None:
    adam_step(
        {k: t.data for k, t in ps.items()},
        {k: t.grad for k, t in ps.items()},
        state, lr, config.beta1, config.beta2, config.adam_eps,
    )


# ---------------------------------------------------------------------------
# models and data


@dataclass
class Model:
    variant: str
    lcn: LcnParams
    net: DcnParams
    max_depth: float


@dataclass
class Prepared:
    """Per-sample arrays used by both stages, in meters and normalized units."""

    sample: SceneSample
    sparse_cloud: PointCloud
    gt_cloud: PointCloud
    sparse_norm: np.ndarray
    gt_norm: np.ndarray
    mask: np.ndarray


def prepare(sample: SceneSample, max_depth: float) -> Prepared:
    return Prepared(
        sample,
        unproject(sample.sparse, sample.K),
        unproject(sample.gt, sample.K),
        sample.sparse.values / max_depth,
        sample.gt.values / max_depth,
        (sample.gt.values > 0).astype(np.float64),
    )


def check_dataset(dataset) -> None:
    if not dataset:
        raise ConfigError("dataset is empty")
    shape = dataset[0].gt.values.shape
    for s in dataset:
        if s.gt.values.shape != shape or s.sparse.values.shape != shape or s.rgb.shape[1:] != shape:
            raise ConfigError(f"all samples must share extents {shape[::-1]}")
    try:
        check_extents(dataset[0].gt.values)
    except DimensionError as e:
        raise ConfigError(str(e)) from None


def network_input(model: Model, sample: SceneSample, sparse: DepthImage | None = None):
    """Network input tensors for one sample plus the projected coarse depth (meters)."""
    sparse = sample.sparse if sparse is None else sparse
    sparse_n = sparse.values / model.max_depth
    if model.variant == "model1":
        dense = sparse
    else:
        cloud = lcn_complete(model.lcn, unproject(sparse, sample.K))
        dense = project_zbuffer(cloud, sample.K).depth
    dense_n = dense.values / model.max_depth
    if model.net.kind == "concat":
        x = np.stack([dense_n, sparse_n, *sample.rgb, sparse_n])
        return (x,), dense
    return (np.stack([dense_n, sparse_n]), np.concatenate([sample.rgb, sparse_n[None]])), dense


def net_forward(net: DcnParams, inputs) -> Tensor:
    if net.kind == "concat":
        return concat_forward(net, *inputs)
    return dcn_forward(net, *inputs)


def predict(model: Model, sample: SceneSample, sparse: DepthImage | None = None):
    """Run the pipeline; returns (projected coarse depth, final dense depth) in meters.

    The final map is clamped to [1 mm, max_depth] so it survives 16-bit export.
    """
    inputs, dense = network_input(model, sample, sparse)
    with no_grad():
        out = net_forward(model.net, inputs)
    pred = np.clip(out.data[0] * model.max_depth, MIN_EXPORT_DEPTH, model.max_depth)
    return dense, DepthImage(pred)


def evaluate_model(model: Model, samples, ratio: float = 1.0, seed: int = 0) -> MetricsReport:
    reports = []
    for i, s in enumerate(samples):
        sparse = s.sparse if ratio == 1 else subsample(s.sparse, ratio, seed + i)
        reports.append(evaluate(predict(model, s, sparse)[1], s.gt))
    return mean_report(reports)


# ---------------------------------------------------------------------------
# training


@dataclass
class Stage1Result:
    lcn: LcnParams
    adam: AdamState
    curve: list[tuple[int, int, float, float]]


@dataclass
class TrainResult:
    model: Model
    train_config: TrainConfig
    lcn_adam: AdamState
    net_adam: AdamState
    curve: list[tuple[int, int, float, float]]
    # sha256 of each network's parameter bytes at the stage boundaries
    snapshots: dict[str, str] = field(default_factory=dict)


def param_digest(ps: ParamSet) -> str:
    return hashlib.sha256(ps.to_bytes()).hexdigest()


def _rng(config: TrainConfig, *tags: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, *tags])


def _batches(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def train_stage1(prepared: list[Prepared], config: TrainConfig, lcn_config: LcnConfig) -> Stage1Result:
    """Fit the point-cloud net on Chamfer distance to the ground-truth cloud."""
    lcn = init_lcn(lcn_config, [config.seed, 1])
    state = AdamState()
    curve = []
    usable = [p for p in prepared if len(p.sparse_cloud)]
    step = 0
    for epoch in range(config.stage1_epochs):
        order = _rng(config, 11, epoch).permutation(len(usable))
        for batch in _batches(order, config.batch_size):
            lr = stage1_lr(config, step)
            lcn.tensors.zero_grad()
            total = 0.0
            for i in batch:
                p = usable[i]
                loss = mul(chamfer_grad(lcn_forward(lcn, p.sparse_cloud), p.gt_cloud), 1.0 / len(batch))
                loss.backward()
                total += loss.item()
            adam_update(lcn.tensors, state, lr, config)
            curve.append((step, 1, total, lr))
            step += 1
        log.info("stage 1 epoch %d: loss %.4f", epoch, curve[-1][2])
    return Stage1Result(lcn, state, curve)


def train_two_stage(
    dataset: list[SceneSample],
    config: TrainConfig,
    lcn_config: LcnConfig | None = None,
    dcn_config: DcnConfig | None = None,
    variant: str = "full",
    stage1: Stage1Result | None = None,
) -> TrainResult:
    """Stage 1 trains only the point-cloud net, stage 2 only the image net.

    ``stage1`` may carry a finished stage-1 run with the same dataset, config
    and seed (it is deterministic, so reuse is exact). The ``model1`` variant
    skips stage 1 and feeds sparse depth in place of the projected coarse map.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    check_dataset(dataset)
    lcn_config = lcn_config or LcnConfig(coord_scale=config.max_depth)
    dcn_config = dcn_config or DcnConfig()
    prepared = [prepare(s, config.max_depth) for s in dataset]
    if variant == "model2":
        net = init_concat_net(matched_concat_config(dcn_config), [config.seed, 2])
    else:
        net = init_dcn(dcn_config, [config.seed, 2])
    snapshots = {"net_init": param_digest(net.tensors)}

    if variant == "model1":
        stage1 = Stage1Result(init_lcn(lcn_config, [config.seed, 1]), AdamState(), [])
    elif stage1 is None:
        stage1 = train_stage1(prepared, config, lcn_config)
    snapshots["net_after_stage1"] = param_digest(net.tensors)
    snapshots["lcn_after_stage1"] = param_digest(stage1.lcn.tensors)
    model = Model(variant, stage1.lcn, net, config.max_depth)

    inputs = [network_input(model, p.sample)[0] for p in prepared]
    state = AdamState()
    curve = list(stage1.curve)
    step = len(curve)
    for epoch in range(config.stage2_epochs):
        lr = stage2_lr(config, epoch)
        order = _rng(config, 22, epoch).permutation(len(prepared))
        for batch in _batches(order, config.batch_size):
            net.tensors.zero_grad()
            total = 0.0
            for i in batch:
                p = prepared[i]
                out = net_forward(net, inputs[i])
                loss = mul(mse_masked(out, p.gt_norm[None], p.mask[None]), 1.0 / len(batch))
                loss.backward()
                total += loss.item()
            adam_update(net.tensors, state, lr, config)
            curve.append((step, 2, total, lr))
            step += 1
        log.info("stage 2 epoch %d: loss %.6f", epoch, curve[-1][2])
    snapshots["lcn_after_stage2"] = param_digest(stage1.lcn.tensors)
    snapshots["net_after_stage2"] = param_digest(net.tensors)
    return TrainResult(model, config, stage1.adam, state, curve, snapshots)


def held_out_chamfer(lcn: LcnParams, samples) -> list[tuple[float, float]]:
    """(completed, raw sparse) Chamfer distance to the ground-truth cloud, per sample."""
    rows = []
    for s in samples:
        sparse = unproject(s.sparse, s.K)
        gt = unproject(s.gt, s.K)
        with no_grad():
            dense = lcn_forward(lcn, sparse)
        rows.append((chamfer_grad(dense, gt).item(), chamfer_bruteforce(sparse, gt).value))
    return rows


def run_ablation(
    dataset: list[SceneSample],
    config: TrainConfig,
    variant: str,
    heldout: list[SceneSample] | None = None,
    lcn_config: LcnConfig | None = None,
    dcn_config: DcnConfig | None = None,
    stage1: Stage1Result | None = None,
) -> MetricsReport:
    """Train one pipeline variant and score it on ``heldout`` (default: the training set)."""
    result = train_two_stage(dataset, config, lcn_config, dcn_config, variant, stage1)
    return evaluate_model(result.model, heldout if heldout is not None else dataset)


def curve_csv(curve) -> str:
    lines = ["step,stage,loss,lr"]
    lines += [f"{s},{st},{loss!r},{lr!r}" for s, st, loss, lr in curve]
    return "\n".join(lines) + "\n"


def config_echo(result: TrainResult) -> dict:
    m = result.model
    return {
        "variant": m.variant,
        "train": asdict(result.train_config),
        "lcn": m.lcn.config.to_dict(),
        "dcn": m.net.config.to_dict(),
        "net_kind": m.net.kind,
        "net_in_channels": list(m.net.in_channels),
    }

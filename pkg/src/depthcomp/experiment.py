"""Desk-scale experiment: train every pipeline variant on synthetic scenes and
score them on a held-out set, with the nearest-fill baseline for reference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .dcn import DcnConfig
from .lcn import LcnConfig
from .metrics import MetricsReport, evaluate, mean_report, nn_fill_baseline
from .synthetic import SceneConfig, SceneSample, generate_dataset
from .training import (
    VARIANTS,
    TrainConfig,
    TrainResult,
    evaluate_model,
    held_out_chamfer,
    prepare,
    train_stage1,
    train_two_stage,
)

log = logging.getLogger(__name__)

SWEEP_DENOMINATORS = (1, 4, 16, 64, 256)


@dataclass(frozen=True)
class DeskSetup:
    scene: SceneConfig = field(default_factory=SceneConfig)
    n_train: int = 64
    n_heldout: int = 16
    train_data_seed: int = 0
    heldout_data_seed: int = 1
    seeds: tuple[int, ...] = (0, 1, 2)
    stage1_epochs: int = 2
    stage2_epochs: int = 11
    variants: tuple[str, ...] = VARIANTS
    dcn: DcnConfig = field(default_factory=DcnConfig)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(stage1_epochs=self.stage1_epochs, stage2_epochs=self.stage2_epochs, seed=seed)

    def lcn_config(self) -> LcnConfig:
        return LcnConfig(coord_scale=TrainConfig().max_depth)


@dataclass
class SeedRun:
    seed: int
    reports: dict[str, MetricsReport]
    results: dict[str, TrainResult]
    chamfer: list[tuple[float, float]]  # (completed, sparse) per held-out scene
    seconds: float


@dataclass
class DeskResults:
    setup: DeskSetup
    train: list[SceneSample]
    heldout: list[SceneSample]
    baseline: MetricsReport
    runs: list[SeedRun]


def make_data(setup: DeskSetup):
    train = generate_dataset(setup.scene, setup.n_train, setup.train_data_seed)
    heldout = generate_dataset(setup.scene, setup.n_heldout, setup.heldout_data_seed)
    return train, heldout


def baseline_report(samples) -> MetricsReport:
    return mean_report([evaluate(nn_fill_baseline(s.sparse), s.gt) for s in samples])


def run_seed(setup: DeskSetup, seed: int, train, heldout) -> SeedRun:
    """All variants for one seed; the variants that use stage 1 share a single run of it."""
    t0 = time.perf_counter()
    config = setup.train_config(seed)
    lcn_cfg = setup.lcn_config()
    stage1 = None
    if any(v != "model1" for v in setup.variants):
        stage1 = train_stage1([prepare(s, config.max_depth) for s in train], config, lcn_cfg)
    reports, results = {}, {}
    for v in setup.variants:
        results[v] = train_two_stage(train, config, lcn_cfg, setup.dcn, v, stage1)
        reports[v] = evaluate_model(results[v].model, heldout)
        log.info("seed %d %s: rmse %.1f", seed, v, reports[v].rmse)
    chamfer = held_out_chamfer(stage1.lcn, heldout) if stage1 is not None else []
    return SeedRun(seed, reports, results, chamfer, time.perf_counter() - t0)


def run_desk(setup: DeskSetup = DeskSetup()) -> DeskResults:
    train, heldout = make_data(setup)
    runs = [run_seed(setup, s, train, heldout) for s in setup.seeds]
    return DeskResults(setup, train, heldout, baseline_report(heldout), runs)


def sweep(result: TrainResult, samples, denominators=SWEEP_DENOMINATORS, seed: int = 0) -> list[tuple[float, MetricsReport]]:
    return [(1.0 / d, evaluate_model(result.model, samples, 1.0 / d, seed)) for d in denominators]


def ablation_csv(results: DeskResults) -> str:
    lines = ["seed,variant,rmse,mae,irmse,imae,valid_pixels"]
    b = results.baseline
    lines.append(f",nn_fill,{b.csv_row()}")
    for run in results.runs:
        for v, r in run.reports.items():
            lines.append(f"{run.seed},{v},{r.csv_row()}")
    return "\n".join(lines) + "\n"

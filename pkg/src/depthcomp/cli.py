"""Command-line entry point: ``depthcomp <subcommand> [flags]``.

Diagnostics (including the resolved configuration) go to stderr; data goes
to files or stdout. Exit status: 0 success, 2 invalid arguments or
configuration, 3 unreadable or malformed files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import checkpoint as ckpt_mod
from .dcn import DcnConfig, concat_param_count, dcn_param_count, matched_concat_config
from .errors import ConfigError, DimensionError, FormatError
from .fileio import read_depth_pgm, write_depth_pgm
from .lcn import LcnConfig, lcn_param_count
from .metrics import CSV_HEADER, evaluate
from .synthetic import SceneConfig, generate_scene, read_sample, scene_seeds, write_sample
from .training import (
    VARIANTS,
    TrainConfig,
    curve_csv,
    evaluate_model,
    predict,
    prepare,
    run_ablation,
    train_stage1,
    train_two_stage,
)

log = logging.getLogger("depthcomp")

SWEEP_RATIOS = "1,4,16,64,256"


def _announce(command: str, **resolved) -> None:
    print(f"{command}: " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def load_dataset(path) -> list:
    root = Path(path)
    if not root.is_dir():
        raise FormatError(root, "dataset directory not found")
    manifest = root / "manifest.csv"
    if manifest.is_file():
        with manifest.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [read_sample(root / r["dir"], int(r["seed"])) for r in rows]
    dirs = sorted(d for d in root.iterdir() if (d / "calib.txt").is_file())
    if not dirs:
        raise FormatError(root, "no sample directories (expected */calib.txt)")
    return [read_sample(d) for d in dirs]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    try:
        cfg = SceneConfig(width=args.width, height=args.height, target_density=args.density,
                          n_boxes=args.boxes, scanline_period=args.scanline_period)
    except DimensionError as e:
        raise ConfigError(str(e)) from None
    _announce("gen-data", scene=asdict(cfg), count=args.count, seed=args.seed, out=args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["index,dir,seed,valid_pixels"]
    for i, s in enumerate(scene_seeds(args.seed, args.count)):
        sample = generate_scene(cfg, s)
        name = f"sample_{i:04d}"
        write_sample(out / name, sample)
        lines.append(f"{i},{name},{s},{sample.sparse.valid_count}")
    (out / "manifest.csv").write_text("\n".join(lines) + "\n")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(stage1_epochs=args.stage1_epochs, stage2_epochs=args.stage2_epochs,
                       batch_size=args.batch_size, max_depth=args.max_depth, seed=args.seed)


def _dcn_config(args) -> DcnConfig:
    return DcnConfig(base_channels=args.base_channels)


def cmd_train(args) -> int:
    config = _train_config(args)
    dcn_cfg = _dcn_config(args)
    lcn_cfg = LcnConfig(coord_scale=config.max_depth)
    _announce("train", train=asdict(config), dcn=dcn_cfg.to_dict(), lcn=lcn_cfg.to_dict(),
              variant=args.variant, seed=config.seed)
    data = load_dataset(args.data)
    result = train_two_stage(data, config, lcn_cfg, dcn_cfg, args.variant)
    ckpt_mod.save_checkpoint(args.out, ckpt_mod.checkpoint_from_result(result))
    losses = Path(args.losses) if args.losses else Path(str(args.out) + ".losses.csv")
    losses.write_text(curve_csv(result.curve))
    return 0


def cmd_ablate(args) -> int:
    config = _train_config(args)
    dcn_cfg = _dcn_config(args)
    lcn_cfg = LcnConfig(coord_scale=config.max_depth)
    variants = list(VARIANTS) if args.variant == "all" else [args.variant]
    _announce("ablate", train=asdict(config), dcn=dcn_cfg.to_dict(), variants=variants, seed=config.seed)
    data = load_dataset(args.data)
    heldout = load_dataset(args.heldout) if args.heldout else data
    stage1 = None
    if any(v != "model1" for v in variants):
        stage1 = train_stage1([prepare(s, config.max_depth) for s in data], config, lcn_cfg)
    lines = ["variant," + CSV_HEADER]
    for v in variants:
        report = run_ablation(data, config, v, heldout, lcn_cfg, dcn_cfg, stage1)
        lines.append(f"{v},{report.csv_row()}")
    _write_or_print(args.out, "\n".join(lines) + "\n")
    return 0


def _load_result(path):
    ckpt = ckpt_mod.load_checkpoint(path)
    return ckpt_mod.result_from_checkpoint(ckpt, path)


def cmd_complete(args) -> int:
    result = _load_result(args.ckpt)
    _announce("complete", ckpt=args.ckpt, sample=args.sample, variant=result.model.variant,
              seed=result.train_config.seed)
    sample = read_sample(args.sample)
    dense_lcn, dense = predict(result.model, sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_depth_pgm(out / "dense_lcn.pgm", dense_lcn)
    write_depth_pgm(out / "dense.pgm", dense)
    return 0


def cmd_eval(args) -> int:
    _announce("eval", pred=args.pred, gt=args.gt)
    report = evaluate(read_depth_pgm(args.pred), read_depth_pgm(args.gt))
    if args.csv:
        sys.stdout.write(CSV_HEADER + "\n" + report.csv_row() + "\n")
    else:
        sys.stdout.write(report.to_text())
    return 0


def cmd_sweep(args) -> int:
    try:
        denominators = [int(r) for r in args.ratios.split(",")]
    except ValueError:
        raise ConfigError(f"--ratios must be comma-separated integers, got {args.ratios!r}") from None
    if any(d < 1 for d in denominators):
        raise ConfigError("sweep ratios must be >= 1")
    result = _load_result(args.ckpt)
    _announce("sweep", ckpt=args.ckpt, ratios=denominators, seed=args.seed)
    data = load_dataset(args.data)
    lines = ["ratio,rmse,mae,irmse,imae"]
    for d in denominators:
        r = evaluate_model(result.model, data, 1.0 / d, args.seed)
        lines.append(f"{1.0 / d!r},{r.rmse!r},{r.mae!r},{r.irmse!r},{r.imae!r}")
    _write_or_print(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_all

    _announce("grad-check", trials=args.trials, tol=args.tol, seed=args.seed)
    results = run_all(trials=args.trials, seed=args.seed)
    failed = False
    for name, err in results.items():
        ok = err < args.tol
        failed |= not ok
        print(f"{name}={err:.3e} {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def cmd_param_count(args) -> int:
    lcn_cfg = LcnConfig.paper_scale() if args.preset == "paper" else LcnConfig()
    dcn_cfg = DcnConfig(base_channels=64 if args.preset == "paper" else args.base_channels)
    _announce("param-count", preset=args.preset, lcn=lcn_cfg.to_dict(), dcn=dcn_cfg.to_dict())
    m2 = matched_concat_config(dcn_cfg)
    print(f"lcn={lcn_param_count(lcn_cfg)}")
    print(f"dcn={dcn_param_count(dcn_cfg)}")
    print(f"model2={concat_param_count(m2)} (base_channels={m2.base_channels})")
    return 0


def _write_or_print(path, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def _add_train_flags(p, default_stage1=2):
    p.add_argument("--data", required=True)
    p.add_argument("--stage1-epochs", type=_positive_int, default=default_stage1)
    p.add_argument("--stage2-epochs", type=_positive_int, default=11)
    p.add_argument("--batch-size", type=_positive_int, default=1)
    p.add_argument("--max-depth", type=float, default=50.0)
    p.add_argument("--base-channels", type=_positive_int, default=16)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthcomp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--density", type=float, default=0.04)
    p.add_argument("--boxes", type=int, default=3)
    p.add_argument("--scanline-period", type=_positive_int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-stage training")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--losses", help="loss curve CSV (default: <out>.losses.csv)")
    p.add_argument("--variant", choices=VARIANTS, default="full")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train and score pipeline variants")
    _add_train_flags(p)
    p.add_argument("--heldout", help="evaluation dataset (default: training data)")
    p.add_argument("--variant", choices=(*VARIANTS, "all"), default="all")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("complete", help="densify one sample directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", help="score a predicted depth map")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="score at reduced sparse densities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", default=SWEEP_RATIOS, help="keep 1/r of the sparse pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference check of every differentiable op")
    p.add_argument("--trials", type=_positive_int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("param-count", help="parameter counts of the networks")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--base-channels", type=_positive_int, default=16)
    p.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DimensionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

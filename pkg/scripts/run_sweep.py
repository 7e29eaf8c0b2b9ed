"""Train the full pipeline once and score it at reduced sparse densities.

    python3 scripts/run_sweep.py --seed 0 --out sweep.csv
"""

import argparse
import logging
from dataclasses import replace

from depthcomp.experiment import DeskSetup, baseline_report, make_data, run_seed, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stage2-epochs", type=int, default=11)
    ap.add_argument("--out", help="CSV path (default: stdout only)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    setup = replace(DeskSetup(), variants=("full",), stage2_epochs=args.stage2_epochs)
    train, heldout = make_data(setup)
    run = run_seed(setup, args.seed, train, heldout)
    rows = ["ratio,rmse,mae,irmse,imae"]
    for ratio, m in sweep(run.results["full"], heldout, seed=args.seed):
        rows.append(f"{ratio!r},{m.rmse!r},{m.mae!r},{m.irmse!r},{m.imae!r}")
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    print(f"nn_fill baseline rmse at ratio 1: {baseline_report(heldout).rmse:.1f}")


if __name__ == "__main__":
    main()

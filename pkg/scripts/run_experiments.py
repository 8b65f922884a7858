"""Multi-seed train + eval over a grid of variants or schedules on real corpora.

Wraps the ``acmimlln train`` / ``acmimlln eval`` code paths: one output
directory per grid cell, one checkpoint per seed, mean and std of test
accuracy per cell. Examples::

    # variant comparison on MAMS-ACSA
    python scripts/run_experiments.py --config mams.json --grid variant standard womil affine softmax
    # training schedules on Rest14, also scored on the hard subset
    python scripts/run_experiments.py --config rest14.json --grid schedule \\
        single-pipeline single-joint multi-pipeline multi-joint --hard
"""

import argparse
from pathlib import Path

from acmimlln.cli import cmd_eval, cmd_train, resolve_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter, epilog=__doc__)
    ap.add_argument("--config", required=True, help="JSON experiment config with data paths")
    ap.add_argument("--grid", nargs="+", required=True, metavar=("KEY", "VALUE"),
                    help="config key followed by the values to sweep")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra overrides")
    ap.add_argument("--hard", action="store_true", help="also score the hard test subset")
    ap.add_argument("--out", default="runs/grid")
    args = ap.parse_args()
    key, values = args.grid[0], args.grid[1:]

    rows = []
    for value in values:
        out = Path(args.out) / f"{key}-{value}"
        cfg = resolve_config(args.config, [*args.set, f"{key}={value}", f"output_dir={out}"])
        if cfg.test_path is None:
            ap.error("the config needs a test_path")
        checkpoints = [str(p) for p in cmd_train(cfg)]
        agg, _ = cmd_eval(checkpoints, cfg.test_path, out_path=str(out / "eval.jsonl"))
        row = [value, agg.acsa_accuracy, agg.std["acsa_accuracy"]]
        if args.hard:
            hard, _ = cmd_eval(checkpoints, cfg.test_path, hard=True, out_path=str(out / "eval-hard.jsonl"))
            row += [hard.acsa_accuracy, hard.std["acsa_accuracy"]]
        rows.append(row)

    header = f"{key:<18}{'test acc':>10}{'std':>8}" + (f"{'hard acc':>10}{'std':>8}" if args.hard else "")
    print(header)
    for row in rows:
        print(f"{row[0]:<18}" + "".join(f"{100 * v:>10.3f}" if i % 2 == 0 else f"{100 * v:>8.3f}"
                                        for i, v in enumerate(row[1:])))


if __name__ == "__main__":
    main()

"""Generate the synthetic dataset and run the four-variant transfer experiment.

    python3 scripts/desk_experiment.py --out runs/desk

Prints the zero-shot table and the 48-image few-shot row when done.
"""

import argparse
import json
from pathlib import Path

from xmm.eval import few_shot_curves, format_pct, table2
from xmm.experiment import DataConfig, RunConfig, generate_dataset, run_desk


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="RunConfig JSON; data is regenerated only if missing")
    p.add_argument("--zero-shot-only", action="store_true")
    args = p.parse_args()

    out = Path(args.out)
    run = RunConfig.load(args.config) if args.config else RunConfig(seed=args.seed)
    run.out = str(out / "run")
    if not args.config:
        run.data = str(out / "data")
    if not (Path(run.data) / "languages.json").exists():
        generate_dataset(run.data, DataConfig(**run.data_config))
    cells, summary = run_desk(run, log=print, few_shot=not args.zero_shot_only)

    print(f"\nmajority baseline {format_pct(summary['majority_baseline'])}, "
          f"{summary['wall_clock_seconds']:.0f}s")
    for variant, row in table2(cells).items():
        print(f"{variant:10s} " + " ".join(f"{k}={format_pct(v)}" for k, v in row.items()))
    if not args.zero_shot_only:
        curves = few_shot_curves(cells)
        print("\n48-image few-shot:")
        for lang, per_variant in curves.items():
            if lang != "en":
                print(f"{lang:4s} " + " ".join(f"{v}={format_pct(s[48])}" for v, s in per_variant.items()))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()

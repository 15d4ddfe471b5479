"""Zero-shot accuracy of the five adapter placements (S1-S5) for one variant.

    python3 scripts/compare_settings.py --data runs/desk/data --out runs/settings
"""

import argparse
import json
from pathlib import Path

from xmm.data import SOURCE_LANGUAGE
from xmm.eval import format_pct
from xmm.experiment import DataConfig, RunConfig, compare_settings, generate_dataset
from xmm.model import ArchSetting


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--data", default="runs/desk/data")
    p.add_argument("--out", default="runs/settings")
    p.add_argument("--variant", default="ADA_MULTI")
    p.add_argument("--settings", nargs="+", default=[s.value for s in ArchSetting])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    run = RunConfig(data=args.data, out=args.out, seed=args.seed)
    if not (Path(args.data) / "languages.json").exists():
        generate_dataset(args.data, DataConfig(**run.data_config))
    matrix = compare_settings(run, args.settings, args.variant, log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.json")
    (out / "settings.json").write_text(json.dumps(matrix, indent=2, sort_keys=True) + "\n")
    langs = [l for l in next(iter(matrix.values())) if l not in ("mean", SOURCE_LANGUAGE)]
    print("\nsetting  en     " + " ".join(f"{l:6s}" for l in langs) + " mean")
    for s, row in matrix.items():
        print(f"{s:8s} {format_pct(row[SOURCE_LANGUAGE])}  " + " ".join(f"{format_pct(row[l])}" for l in langs)
              + f"  {format_pct(row['mean'])}")


if __name__ == "__main__":
    main()

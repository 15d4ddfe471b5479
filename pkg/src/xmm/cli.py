"""Command-line entry point: ``xmm <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .data import SOURCE_LANGUAGE, SplitError, build_answer_vocab
from .eval import ReportCell, emit_report
from .experiment import (
    DataConfig,
    RunConfig,
    build_task_model,
    compare_settings,
    generate_dataset,
    load_dataset,
    model_config,
    run_desk,
)
from .model import ArchSetting, SwapError, Variant
from .phases import (
    PhaseKind,
    apply_freeze_plan,
    freeze_plan,
    full_scale_regime,
    run_few_shot,
    run_language_extension,
    run_pretrain,
    run_target_task,
    run_zero_shot,
)

PHASES = {"pretrain": PhaseKind.PRETRAIN, "extend": PhaseKind.LANG_EXTEND,
          "task": PhaseKind.TARGET_TASK, "fewshot": PhaseKind.FEW_SHOT}


class UsageError(Exception):
    pass


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _load_run(args):
    run = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        run.seed = args.seed
    if getattr(args, "data", None):
        run.data = args.data
    if getattr(args, "out", None):
        run.out = args.out
    return run


def _variant(run, args):
    return Variant(args.variant) if getattr(args, "variant", None) else Variant(run.variants[0])


def cmd_gen_data(args):
    cfg = DataConfig(seed=args.seed, scenes=args.scenes, languages=args.languages, task_scenes=args.task_scenes,
                     corpus_sentences=args.corpus_sentences)
    langs = generate_dataset(args.out, cfg)
    _log(f"wrote {cfg.scenes} scenes in {len(langs)} languages to {args.out}")


def cmd_train(args):
    run = _load_run(args)
    variant = _variant(run, args)
    kind = PHASES[args.phase]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.json")
    language = args.language
    phase = run.phase(kind, variant, language).resolved()
    (out / "phase.json").write_text(json.dumps({"resolved": phase.to_dict(),
                                                 "full_scale_regime": full_scale_regime(kind, variant)},
                                                indent=2, sort_keys=True) + "\n")
    if args.dry_run:
        print(json.dumps(phase.to_dict(), sort_keys=True))
        return
    ds = load_dataset(run.data)
    if kind == PhaseKind.PRETRAIN:
        num_answers = args.num_answers or len(build_answer_vocab(ds.task_train))
        cfg = model_config(run, variant, run.languages or ds.languages, num_answers)
        ckpt, report = run_pretrain(cfg, ds.corpora, phase)
        reports = {"pretrain": report}
    else:
        if not args.checkpoint:
            raise UsageError(f"--phase {args.phase} needs --checkpoint")
        ckpt = Checkpoint.load(args.checkpoint)
        if kind == PhaseKind.LANG_EXTEND:
            targets = [language] if language else [l for l in (run.languages or ds.languages) if l != SOURCE_LANGUAGE]
            reports = {}
            for k, lang in enumerate(targets):
                language = lang
                ckpt, reports[f"extend_{lang}"] = run_language_extension(
                    ckpt, lang, ds.corpora[lang], run.phase(kind, ckpt.cfg.variant, lang, 10 + k))
        elif kind == PhaseKind.TARGET_TASK:
            ckpt, report = run_target_task(ckpt, ds.task_train, ds.task_dev, ds.all_regions(), phase)
            reports = {"task": report}
        else:
            if not language:
                raise UsageError("--phase fewshot needs --language")
            results, reps = run_few_shot(ckpt, language, run.split_sizes, ds.plan, ds.xgqa[language],
                                         ds.regions, phase)
            cells = [ReportCell(ckpt.cfg.variant.value, language, k, r) for k, r in sorted(results.items())]
            emit_report(cells, "csv", out / "report.csv")
            reports = {f"fewshot_{language}_{k}": r for k, r in reps.items()}
            ckpt = None
    if ckpt is not None:
        # saved trainable flags record the plan of the phase just run
        apply_freeze_plan(ckpt.store, freeze_plan(ckpt.cfg.variant, kind, language))
        ckpt.save(out / "checkpoint")
    for name, rep in reports.items():
        rep.to_json(out / f"{name}.json")
        rep.to_csv(out / f"{name}.csv")
    _log(f"{args.phase}: wrote {out}")


def cmd_eval(args):
    run = _load_run(args)
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(run.data)
    langs = args.languages.split(",") if args.languages else (run.languages or ds.languages)
    missing = [l for l in langs if l not in ds.xgqa]
    if missing:
        raise UsageError(f"no evaluation data for {missing}")
    variant = ckpt.cfg.variant.value
    cells = []
    for lang in langs:
        if args.few_shot_grid and lang != SOURCE_LANGUAGE:
            phase = run.phase(PhaseKind.FEW_SHOT, ckpt.cfg.variant, lang, 200)
            results, _ = run_few_shot(ckpt, lang, run.split_sizes, ds.plan, ds.xgqa[lang], ds.regions, phase)
            cells.extend(ReportCell(variant, lang, k, r) for k, r in sorted(results.items()))
        else:
            cells.append(ReportCell(variant, lang, 0, run_zero_shot(ckpt, lang, ds.test(lang), ds.regions)))
        _log(f"{lang}: " + " ".join(f"{c.split_size}:{c.result.overall:.4f}" for c in cells if c.language == lang))
    report = Path(args.report)
    fmt = "json" if report.suffix == ".json" else "csv"
    emit_report(cells, fmt, report)
    run.save(report.parent / f"{report.stem}.config.json")


def cmd_compare_settings(args):
    run = _load_run(args)
    settings = [ArchSetting(s) for s in args.settings]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.json")
    matrix = compare_settings(run, settings, _variant(run, args), log=_log)
    langs = [k for k in next(iter(matrix.values())) if k != "mean"]
    with open(out / "settings.csv", "w", encoding="utf-8") as f:
        f.write("setting," + ",".join(langs) + ",mean\n")
        for s, row in matrix.items():
            f.write(s + "," + ",".join(repr(row[l]) for l in langs) + f",{row['mean']!r}\n")
    (out / "settings.json").write_text(json.dumps(matrix, indent=2, sort_keys=True) + "\n")


def cmd_desk(args):
    run = _load_run(args)
    _, summary = run_desk(run, log=_log, few_shot=not args.zero_shot_only)
    _log(f"done in {summary['wall_clock_seconds']:.0f}s; majority baseline {summary['majority_baseline']:.4f}")


def build_parser():
    p = argparse.ArgumentParser(prog="xmm", description="Multilingual multimodal adapter transfer experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic multilingual dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenes", type=int, default=120)
    g.add_argument("--languages", type=int, default=5, help="number of cipher target languages")
    g.add_argument("--task-scenes", type=int, default=DataConfig.task_scenes)
    g.add_argument("--corpus-sentences", type=int, default=DataConfig.corpus_sentences)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training phase")
    t.add_argument("--phase", required=True, choices=sorted(PHASES))
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--data")
    t.add_argument("--variant", choices=[v.value for v in Variant])
    t.add_argument("--checkpoint", help="input checkpoint (all phases but pretrain)")
    t.add_argument("--language", help="target language (extend, fewshot)")
    t.add_argument("--num-answers", type=int, help="answer classes of the prediction head (pretrain; default: task training answers)")
    t.add_argument("--dry-run", action="store_true", help="write and print the resolved phase config only")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="zero-shot or few-shot evaluation")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--languages", help="comma-separated language codes")
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--zero-shot", action="store_true", help="default")
    mode.add_argument("--few-shot-grid", action="store_true")
    e.add_argument("--report", required=True, help=".csv or .json")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare-settings", help="train and evaluate architecture settings S1-S5")
    c.add_argument("--settings", nargs="+", required=True, choices=[s.value for s in ArchSetting])
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--data")
    c.add_argument("--variant", choices=[v.value for v in Variant])
    c.set_defaults(func=cmd_compare_settings)

    d = sub.add_parser("desk", help="full pipeline for every configured variant")
    d.add_argument("--config")
    d.add_argument("--out")
    d.add_argument("--seed", type=int)
    d.add_argument("--data")
    d.add_argument("--zero-shot-only", action="store_true")
    d.set_defaults(func=cmd_desk)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"xmm: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError, SwapError, SplitError, RuntimeError, OSError) as exc:
        print(f"xmm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

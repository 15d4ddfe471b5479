"""Desk-scale transfer experiment: synthetic data, the four variants, reports.

A dataset directory holds::

    regions.bin            region features of the multilingual evaluation images
    task_regions.bin       region features of the source-language task images
    task_train.jsonl       source-language task training questions
    task_dev.jsonl         source-language task dev questions
    xgqa_{lang}.jsonl      evaluation-image questions per language (source + ciphers)
    corpus_{lang}.txt      unlabelled MLM text per language (non-parallel)
    splits.json            test/dev/few-shot image splits of the evaluation images
    languages.json         language code -> cipher key (source has none)
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import (
    FEW_SHOT_SIZES,
    SOURCE_LANGUAGE,
    SplitPlan,
    build_answer_vocab,
    cipher_translate,
    generate_corpus,
    generate_questions,
    generate_scene,
    load_regions,
    load_xgqa,
    make_cipher,
    make_few_shot_splits,
    save_questions,
    save_regions,
)
from .eval import ReportCell, emit_report, majority_baseline, non_source_mean
from .model import ArchSetting, ModelConfig, Variant
from .phases import (
    PhaseConfig,
    PhaseKind,
    run_few_shot,
    run_language_extension,
    run_pretrain,
    run_target_task,
    run_zero_shot,
)

VARIANTS = tuple(Variant)


def language_code(key):
    return f"x{key}"


# -- data ----------------------------------------------------------------------

@dataclass
class DataConfig:
    seed: int = 0
    scenes: int = 120
    languages: int = 5
    task_scenes: int = 1500
    task_dev_scenes: int = 60
    corpus_sentences: int = 3000
    n_test: int = 40
    n_dev: int = 20
    split_sizes: tuple = FEW_SHOT_SIZES

    def __post_init__(self):
        self.split_sizes = tuple(self.split_sizes)


def _scene_seeds(seed, stream, n):
    ss = np.random.SeedSequence([int(seed), stream])
    return [int(s) for s in ss.generate_state(n, dtype=np.uint32)]


def _scenes(seed, stream, n, prefix):
    scenes, regions, records = [], [], []
    for k, s in enumerate(_scene_seeds(seed, stream, n)):
        scene, rs = generate_scene(s, image_id=f"{prefix}{k:04d}")
        scenes.append(scene)
        regions.append(rs)
        records.extend(generate_questions(scene, seed=s))
    return scenes, regions, records


def generate_dataset(out, cfg=None):
    """Write a complete synthetic dataset to ``out``; returns the language list."""
    cfg = cfg or DataConfig()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _, regions, records = _scenes(cfg.seed, 0, cfg.scenes, "img")
    _, task_regions, task_train = _scenes(cfg.seed, 1, cfg.task_scenes, "gqa")
    _, dev_regions, task_dev = _scenes(cfg.seed, 2, cfg.task_dev_scenes, "gqadev")
    save_regions(regions, out / "regions.bin")
    save_regions(task_regions + dev_regions, out / "task_regions.bin")
    save_questions(task_train, out / "task_train.jsonl")
    save_questions(task_dev, out / "task_dev.jsonl")

    keys = {language_code(k): k for k in range(1, cfg.languages + 1)}
    save_questions(records, out / f"xgqa_{SOURCE_LANGUAGE}.jsonl")
    corpus_seeds = _scene_seeds(cfg.seed, 3, cfg.languages + 1)
    _write_lines(out / f"corpus_{SOURCE_LANGUAGE}.txt", generate_corpus(corpus_seeds[0], cfg.corpus_sentences))
    for i, (lang, key) in enumerate(keys.items(), start=1):
        cipher = make_cipher(key)
        save_questions([cipher_translate(r, key, lang, cipher) for r in records], out / f"xgqa_{lang}.jsonl")
        corpus = generate_corpus(corpus_seeds[i], cfg.corpus_sentences)
        _write_lines(out / f"corpus_{lang}.txt", [cipher.translate_text(s) for s in corpus])

    index = {r.image_id for r in regions}
    plan = make_few_shot_splits(records, index, cfg.split_sizes, cfg.seed, cfg.n_test, cfg.n_dev)
    plan.save(out / "splits.json")
    (out / "languages.json").write_text(json.dumps({SOURCE_LANGUAGE: None, **keys}, indent=2) + "\n")
    return [SOURCE_LANGUAGE, *keys]


def _write_lines(path, lines):
    Path(path).write_text("".join(s + "\n" for s in lines), encoding="utf-8")


def _read_lines(path):
    return [s for s in Path(path).read_text(encoding="utf-8").split("\n") if s]


@dataclass
class Dataset:
    root: Path
    languages: list
    regions: dict
    task_regions: dict
    task_train: list
    task_dev: list
    xgqa: dict
    corpora: dict
    plan: SplitPlan

    @property
    def targets(self):
        return [l for l in self.languages if l != SOURCE_LANGUAGE]

    def all_regions(self):
        return {**self.task_regions, **self.regions}

    def test(self, lang):
        return self.plan.records("TEST", self.xgqa[lang])


def load_dataset(root):
    root = Path(root)
    langs = list(json.loads((root / "languages.json").read_text()))
    return Dataset(
        root, langs,
        load_regions(root / "regions.bin"),
        load_regions(root / "task_regions.bin"),
        load_xgqa(root / "task_train.jsonl"),
        load_xgqa(root / "task_dev.jsonl"),
        {l: load_xgqa(root / f"xgqa_{l}.jsonl") for l in langs},
        {l: _read_lines(root / f"corpus_{l}.txt") for l in langs},
        SplitPlan.load(root / "splits.json"),
    )


# -- runs ----------------------------------------------------------------------

def default_model():
    return {"num_layers": 2, "hidden": 64, "heads": 4, "ffn_dim": 128, "adapter_reduction": 2,
            "max_text_len": 24, "max_regions": 9, "arch_setting": "S5"}


def default_phases():
    return {
        "pretrain": {"steps": 4000, "adapter_steps": 1000, "batch_size": 32, "lr": 1e-3, "vocab_size": 1000},
        "extend": {"steps": 300, "batch_size": 32, "lr": 1e-3},
        "task": {"epochs": 8, "batch_size": 32, "lr": {"FULL_FT": 3e-4, "EMB_SWAP": 3e-4,
                                                       "ADA_MONO": 1e-3, "ADA_MULTI": 1e-3}},
        "fewshot": {"epochs": 10, "batch_size": 16, "lr": {"FULL_FT": 5e-4, "EMB_SWAP": 5e-4,
                                                           "ADA_MONO": 1e-3, "ADA_MULTI": 1e-3}},
    }


@dataclass
class RunConfig:
    """Everything a desk run needs; written beside its outputs."""

    data: str = "data"
    out: str = "runs/desk"
    seed: int = 0
    variants: list = field(default_factory=lambda: [v.value for v in VARIANTS])
    languages: list | None = None
    split_sizes: list = field(default_factory=lambda: list(FEW_SHOT_SIZES))
    model: dict = field(default_factory=default_model)
    phases: dict = field(default_factory=default_phases)
    data_config: dict = field(default_factory=lambda: asdict(DataConfig()))

    def __post_init__(self):
        self.variants = [Variant(v).value for v in self.variants]
        ModelConfig.from_dict({**self.model, "num_answers": 2})
        unknown = set(self.phases) - {"pretrain", "extend", "task", "fewshot"}
        if unknown:
            raise ValueError(f"unknown phase sections: {sorted(unknown)}")
        DataConfig(**self.data_config)

    def to_dict(self):
        d = asdict(self)
        d["data_config"]["split_sizes"] = list(d["data_config"]["split_sizes"])
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown RunConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def phase(self, kind, variant, language=None, seed_offset=0):
        key = {PhaseKind.PRETRAIN: "pretrain", PhaseKind.LANG_EXTEND: "extend",
               PhaseKind.TARGET_TASK: "task", PhaseKind.FEW_SHOT: "fewshot"}[PhaseKind(kind)]
        d = dict(self.phases.get(key, {}))
        if isinstance(d.get("lr"), dict):
            d["lr"] = d["lr"].get(Variant(variant).value)
        d.setdefault("seed", self.seed + seed_offset)
        return PhaseConfig(kind=kind, variant=variant, language=language, **d)


def model_config(run, variant, languages, num_answers, setting=None):
    d = {**run.model, "variant": Variant(variant).value, "num_answers": num_answers}
    if setting is not None:
        d["arch_setting"] = ArchSetting(setting).value
    v = Variant(variant)
    d["languages"] = list(languages) if not v.per_language_embedding else [SOURCE_LANGUAGE]
    return ModelConfig.from_dict(d)


def build_task_model(run, ds, variant, setting=None, log=None):
    """Pretrain, extend (per-language-embedding variants) and fine-tune on the
    source task; returns the zero-shot-ready checkpoint and the reports."""
    variant = Variant(variant)
    langs = run.languages or ds.languages
    answers = build_answer_vocab(ds.task_train)
    cfg = model_config(run, variant, langs, len(answers), setting)
    reports = {}
    ckpt, reports["pretrain"] = run_pretrain(cfg, ds.corpora, run.phase(PhaseKind.PRETRAIN, variant))
    _log(log, f"{variant.value}: pretrain done ({reports['pretrain'].wall_clock_seconds:.1f}s)")
    if variant.per_language_embedding:
        for k, lang in enumerate(l for l in langs if l != SOURCE_LANGUAGE):
            ckpt, reports[f"extend_{lang}"] = run_language_extension(
                ckpt, lang, ds.corpora[lang], run.phase(PhaseKind.LANG_EXTEND, variant, lang, 10 + k))
        _log(log, f"{variant.value}: language extension done")
    ckpt.answers = answers
    ckpt, reports["task"] = run_target_task(ckpt, ds.task_train, ds.task_dev, ds.all_regions(),
                                            run.phase(PhaseKind.TARGET_TASK, variant, seed_offset=100))
    _log(log, f"{variant.value}: task done, dev {reports['task'].final_dev_accuracy:.3f} "
              f"({reports['task'].wall_clock_seconds:.1f}s)")
    return ckpt, reports


def _log(log, msg):
    if log is not None:
        log(msg)


def evaluate_transfer(run, ds, ckpt, variant, few_shot=True, log=None):
    """Zero-shot cells for every language (source included) and few-shot
    cells per target language and split size."""
    variant = Variant(variant)
    langs = run.languages or ds.languages
    cells = []
    reports = {}
    for lang in langs:
        if lang == SOURCE_LANGUAGE or not few_shot:
            res = run_zero_shot(ckpt, lang, ds.test(lang), ds.regions)
            cells.append(ReportCell(variant.value, lang, 0, res))
            _log(log, f"{variant.value} {lang}: zero-shot {res.overall:.3f}")
            continue
        results, reps = run_few_shot(ckpt, lang, run.split_sizes, ds.plan, ds.xgqa[lang], ds.regions,
                                     run.phase(PhaseKind.FEW_SHOT, variant, lang, 200))
        for k, res in sorted(results.items()):
            cells.append(ReportCell(variant.value, lang, k, res))
        reports.update({f"fewshot_{lang}_{k}": r for k, r in reps.items()})
        _log(log, f"{variant.value} {lang}: " + " ".join(f"{k}:{r.overall:.3f}" for k, r in sorted(results.items())))
    return cells, reports


def run_desk(run, log=None, few_shot=True):
    """Full pipeline for every configured variant; writes checkpoints, train
    reports and ``report.csv``/``report.json`` under ``run.out``."""
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "config.json")
    ds = load_dataset(run.data)
    cells = []
    t0 = time.perf_counter()
    for variant in run.variants:
        ckpt, reports = build_task_model(run, ds, variant, log=log)
        ckpt.save(out / variant / "checkpoint")
        vcells, freps = evaluate_transfer(run, ds, ckpt, variant, few_shot, log)
        reports.update(freps)
        rdir = out / variant / "reports"
        rdir.mkdir(parents=True, exist_ok=True)
        for name, rep in reports.items():
            rep.to_json(rdir / f"{name}.json")
            rep.to_csv(rdir / f"{name}.csv")
        cells.extend(vcells)
    emit_report(cells, "csv", out / "report.csv")
    emit_report(cells, "json", out / "report.json")
    answers = build_answer_vocab(ds.task_train)
    baseline = majority_baseline(answers.encode(ds.task_train), answers.encode(ds.test(SOURCE_LANGUAGE)))
    summary = {"majority_baseline": baseline, "wall_clock_seconds": time.perf_counter() - t0}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return cells, summary


def compare_settings(run, settings, variant=Variant.ADA_MULTI, log=None):
    """Train one model per architecture setting with shared seeds and report
    zero-shot accuracy per (setting, language)."""
    ds = load_dataset(run.data)
    langs = run.languages or ds.languages
    matrix = {}
    for s in settings:
        s = ArchSetting(s)
        ckpt, _ = build_task_model(run, ds, variant, setting=s, log=log)
        row = {}
        for lang in langs:
            row[lang] = run_zero_shot(ckpt, lang, ds.test(lang), ds.regions).overall
        row["mean"] = non_source_mean(row) if any(l != SOURCE_LANGUAGE for l in row) else None
        matrix[s.value] = row
        _log(log, f"{s.value}: " + " ".join(f"{k}={v:.3f}" for k, v in row.items() if v is not None))
    return matrix

"""Training and transfer protocols with their freeze plans.

Freeze plans (trainable groups; everything else frozen):

=============  ==========================  ===============================================
phase          variant                     trainable
=============  ==========================  ===============================================
PRETRAIN       all                         CORE_TRANSFORMER, TEXT_EMBEDDING, MLM_HEAD
LANG_EXTEND    EMB_SWAP                    TEXT_EMBEDDING(target)
LANG_EXTEND    ADA_MONO                    TEXT_EMBEDDING(target), LANGUAGE_ADAPTER(target)
LANG_EXTEND    ADA_MULTI                   LANGUAGE_ADAPTER(target)  (adapter stage of pretraining)
LANG_EXTEND    FULL_FT                     nothing (no extension step)
TARGET_TASK    FULL_FT                     everything
TARGET_TASK    EMB_SWAP                    CORE_TRANSFORMER, PREDICTION_HEAD
TARGET_TASK    ADA_MONO                    TASK_ADAPTER_TEXT/IMAGE, ALIGNMENT_ADAPTER, PREDICTION_HEAD
TARGET_TASK    ADA_MULTI                   as ADA_MONO plus IMAGE_PROJECTION
FEW_SHOT       any                         same as TARGET_TASK
=============  ==========================  ===============================================
"""

from __future__ import annotations

import enum
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .checkpoint import Checkpoint
from .data.schema import OUT_OF_VOCAB, build_answer_vocab
from .data.splits import SplitError
from .diffcore import ContractError, GroupKind, GroupTag
from .eval import EvalResult, make_result
from .model import (
    SHARED_LANGUAGE,
    Batch,
    ModelConfig,
    Variant,
    active_language,
    init_store,
    language_adapter_params,
    predict,
    sort_banks,
    swap_language,
)
from .textproc import (
    PAD,
    init_embeddings_with_overlap,
    mlm_mask,
    tokenize,
    train_tokenizer,
)

K = GroupKind
EVAL_SHARD = 128


class PhaseKind(str, enum.Enum):
    PRETRAIN = "PRETRAIN"
    LANG_EXTEND = "LANG_EXTEND"
    TARGET_TASK = "TARGET_TASK"
    FEW_SHOT = "FEW_SHOT"


class InputError(ValueError):
    pass


# -- freeze plans ----------------------------------------------------------------

@dataclass(frozen=True)
class FreezePlan:
    """Trainable ``(kind, language)`` pairs; ``language=None`` matches any."""

    trainable: tuple = ()

    def __call__(self, tag):
        return any(tag.kind == k and (lang is None or tag.language == lang) for k, lang in self.trainable)

    def describe(self):
        return [k.value if lang is None else f"{k.value}({lang})" for k, lang in self.trainable]


TASK_ADAPTER_KINDS = (K.TASK_ADAPTER_TEXT, K.TASK_ADAPTER_IMAGE, K.ALIGNMENT_ADAPTER, K.PREDICTION_HEAD)


def freeze_plan(variant, phase, language=None):
    variant, phase = Variant(variant), PhaseKind(phase)
    if phase == PhaseKind.PRETRAIN:
        return FreezePlan(((K.CORE_TRANSFORMER, None), (K.TEXT_EMBEDDING, None), (K.MLM_HEAD, None)))
    if phase == PhaseKind.LANG_EXTEND:
        if variant == Variant.FULL_FT:
            return FreezePlan()
        if language is None:
            raise ContractError("language-extension plans need a target language")
        kinds = {Variant.EMB_SWAP: (K.TEXT_EMBEDDING,),
                 Variant.ADA_MONO: (K.TEXT_EMBEDDING, K.LANGUAGE_ADAPTER),
                 Variant.ADA_MULTI: (K.LANGUAGE_ADAPTER,)}[variant]
        return FreezePlan(tuple((k, language) for k in kinds))
    if variant == Variant.FULL_FT:
        return FreezePlan(tuple((k, None) for k in GroupKind))
    if variant == Variant.EMB_SWAP:
        return FreezePlan(((K.CORE_TRANSFORMER, None), (K.PREDICTION_HEAD, None)))
    kinds = TASK_ADAPTER_KINDS + ((K.IMAGE_PROJECTION,) if variant == Variant.ADA_MULTI else ())
    return FreezePlan(tuple((k, None) for k in kinds))


def apply_freeze_plan(store, plan):
    """Freeze everything, then unfreeze what ``plan`` selects; returns the
    sorted trainable names."""
    dc.set_trainable(store, lambda g: True, False)
    dc.set_trainable(store, plan, True)
    return store.trainable_names()


# -- configs and reports ---------------------------------------------------------------

FULL_SCALE_DEFAULTS = {
    PhaseKind.LANG_EXTEND: {"steps": 100_000, "batch_size": 64, "lr": 1e-4},
    PhaseKind.TARGET_TASK: {"epochs": 5, "batch_size": 192},
    PhaseKind.FEW_SHOT: {"epochs": 10, "batch_size": 192},
}
FULL_SCALE_TASK_LR = {Variant.FULL_FT: 3e-5, Variant.EMB_SWAP: 3e-5, Variant.ADA_MONO: 1e-4, Variant.ADA_MULTI: 1e-4}
FULL_SCALE_FEW_SHOT_LR_GRID = {Variant.FULL_FT: (1e-5, 5e-5), Variant.EMB_SWAP: (1e-5, 5e-5),
                          Variant.ADA_MONO: (5e-5, 1e-4), Variant.ADA_MULTI: (5e-5, 1e-4)}
FULL_SCALE_FEW_SHOT_EPOCH_GRID = (5, 10)
# desk-only stand-in for backbone pretraining; no full-scale counterpart
PRETRAIN_DEFAULTS = {"steps": 2000, "batch_size": 32, "lr": 1e-3}


@dataclass
class PhaseConfig:
    kind: PhaseKind
    variant: Variant = Variant.ADA_MULTI
    steps: int | None = None
    epochs: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    lr_grid: tuple | None = None
    seed: int = 0
    language: str | None = None
    mask_prob: float = 0.15
    restrict_vocab: bool = True
    adapter_steps: int | None = None
    vocab_size: int | None = None

    def __post_init__(self):
        self.kind = PhaseKind(self.kind)
        self.variant = Variant(self.variant)
        if self.lr_grid is not None:
            self.lr_grid = tuple(self.lr_grid)

    def resolved(self):
        """Copy with unset fields filled from the full-scale defaults."""
        d = asdict(self)
        defaults = dict(PRETRAIN_DEFAULTS if self.kind == PhaseKind.PRETRAIN else FULL_SCALE_DEFAULTS[self.kind])
        if self.kind == PhaseKind.TARGET_TASK:
            defaults["lr"] = FULL_SCALE_TASK_LR[self.variant]
        if self.kind == PhaseKind.FEW_SHOT:
            defaults["lr_grid"] = FULL_SCALE_FEW_SHOT_LR_GRID[self.variant]
        counted = self.steps is not None or self.epochs is not None
        for k, v in defaults.items():
            if k in ("steps", "epochs") and counted:
                continue
            if d.get(k) is None:
                d[k] = v
        if self.kind == PhaseKind.FEW_SHOT and d.get("lr") is None:
            d["lr"] = max(d["lr_grid"])
        out = PhaseConfig(**d)
        out.check()
        return out

    def check(self):
        if (self.steps is None) == (self.epochs is None):
            raise ValueError(f"{self.kind.value}: set exactly one of steps/epochs")
        if self.kind in (PhaseKind.PRETRAIN, PhaseKind.LANG_EXTEND) and self.steps is None:
            raise ValueError(f"{self.kind.value} is step-based")
        if self.kind in (PhaseKind.TARGET_TASK, PhaseKind.FEW_SHOT) and self.epochs is None:
            raise ValueError(f"{self.kind.value} is epoch-based")

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        d["variant"] = self.variant.value
        if d["lr_grid"] is not None:
            d["lr_grid"] = list(d["lr_grid"])
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown PhaseConfig fields: {sorted(unknown)}")
        return cls(**d)


def full_scale_regime(kind, variant):
    kind, variant = PhaseKind(kind), Variant(variant)
    if kind == PhaseKind.PRETRAIN:
        return {}
    d = dict(FULL_SCALE_DEFAULTS[kind])
    if kind == PhaseKind.TARGET_TASK:
        d["lr"] = FULL_SCALE_TASK_LR[variant]
    if kind == PhaseKind.FEW_SHOT:
        d["lr_grid"] = list(FULL_SCALE_FEW_SHOT_LR_GRID[variant])
        d["epoch_grid"] = list(FULL_SCALE_FEW_SHOT_EPOCH_GRID)
    return d


@dataclass
class TrainReport:
    phase: str
    variant: str
    language: str | None
    losses: list = field(default_factory=list)
    dev_accuracies: list = field(default_factory=list)
    final_dev_accuracy: float | None = None
    best_step: int | None = None
    wall_clock_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    full_scale_regime: dict = field(default_factory=dict)
    trainable: list = field(default_factory=list)

    def deterministic_view(self):
        d = asdict(self)
        d.pop("wall_clock_seconds")
        return d

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("step,loss\n")
            for i, loss in enumerate(self.losses, start=1):
                f.write(f"{i},{loss!r}\n")

    @classmethod
    def from_json(cls, path):
        return cls(**json.loads(Path(path).read_text()))


# -- encoding ------------------------------------------------------------------

@dataclass
class Encoded:
    records: list
    ids: np.ndarray
    feats: np.ndarray
    boxes: np.ndarray
    n_regions: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.records)

    def batch(self, idx):
        idx = np.asarray(idx)
        ids = self.ids[idx]
        lens = (ids != PAD).sum(axis=1)
        t = max(int(lens.max()), 2)
        ids = ids[:, :t]
        n = max(int(self.n_regions[idx].max()), 1)
        region_mask = np.arange(n)[None, :] < self.n_regions[idx][:, None]
        return Batch(ids, ids != PAD, self.feats[idx, :n], self.boxes[idx, :n], region_mask, self.labels[idx])


def encode_records(ckpt, records, regions, language=None):
    cfg = ckpt.cfg
    m = len(records)
    ids = np.zeros((m, cfg.max_text_len), dtype=np.int64)
    feats = np.zeros((m, cfg.max_regions, cfg.region_feature_dim))
    boxes = np.zeros((m, cfg.max_regions, cfg.box_dim))
    nreg = np.zeros(m, dtype=np.int64)
    for i, r in enumerate(records):
        ids[i] = tokenize(ckpt.vocab(language or r.language), r.text, cfg.max_text_len)
        rs = regions[r.image_id]
        n = len(rs)
        if n > cfg.max_regions:
            raise InputError(f"{r.image_id}: {n} regions exceeds max_regions={cfg.max_regions}")
        feats[i, :n] = rs.features
        boxes[i, :n] = rs.boxes
        nreg[i] = n
    labels = (ckpt.answers.encode(records) if ckpt.answers is not None
              else np.full(m, OUT_OF_VOCAB, dtype=np.int64))
    return Encoded(list(records), ids, feats, boxes, nreg, labels)


def _threads():
    try:
        return max(1, int(os.environ.get("XMM_THREADS", "1")))
    except ValueError:
        return 1


def predict_encoded(ckpt, enc, language):
    """Argmax predictions; shards are fixed-size so results do not depend on
    the number of worker threads."""
    model = ckpt.model
    shards = [np.arange(i, min(i + EVAL_SHARD, len(enc))) for i in range(0, len(enc), EVAL_SHARD)]

    def run(idx):
        return predict(model.answer_logits(enc.batch(idx), language))

    if _threads() > 1 and len(shards) > 1:
        with ThreadPoolExecutor(_threads()) as pool:
            parts = list(pool.map(run, shards))
    else:
        parts = [run(s) for s in shards]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def evaluate(ckpt, records, regions, language, enc=None):
    enc = enc if enc is not None else encode_records(ckpt, records, regions, language)
    preds = predict_encoded(ckpt, enc, language)
    return make_result(enc.records, preds, enc.labels)


# -- MLM machinery ---------------------------------------------------------------

def _encode_corpus(vocab, corpus, max_len):
    return np.array([tokenize(vocab, s, max_len) for s in corpus], dtype=np.int64)


def mlm_loss(model, ids, rng, language, mask_prob, vocab_size, use_adapters, vocab_bias=None):
    t = max(int((ids != PAD).sum(axis=1).max()), 2)
    ids = ids[:, :t]
    mb = mlm_mask(ids, mask_prob, rng=rng, vocab_size=vocab_size)
    if mb.positions.size == 0:
        flat = ids.reshape(-1)
        cand = np.flatnonzero(flat >= 5)
        pos = cand[rng.integers(cand.size)]
        inp = flat.copy()
        inp[pos] = 4
        mb = type(mb)(inp.reshape(ids.shape), np.array([pos]), flat[[pos]])
    batch = Batch(mb.input_ids, ids != PAD)
    x = model.embed_inputs(batch, language)
    h = model.encoder_forward(x, batch, language, use_adapters=use_adapters, task=False)
    rows, cols = np.divmod(mb.positions, t)
    logits = model.mlm_head(h, (rows, cols), language, n_text=t, vocab_bias=vocab_bias)
    return dc.cross_entropy(logits, mb.targets), logits, mb.targets


def stream_vocab_bias(ids, vocab_size):
    """0 for tokens occurring in ``ids`` (and specials), a large negative
    value elsewhere."""
    seen = np.zeros(vocab_size, dtype=bool)
    seen[np.unique(ids)] = True
    seen[:5] = True
    return np.where(seen, 0.0, dc.tensor.MASK_BIAS)


def train_mlm(ckpt, corpora, steps, batch_size, lr, seed, mask_prob=0.15, use_adapters=True, report=None,
              restrict_vocab=False):
    """MLM on ``corpora`` ({language: encoded id matrix}); batches cycle
    through the languages. ``restrict_vocab`` limits each language's
    predictions to the tokens occurring in its own corpus."""
    model = ckpt.model
    rng = np.random.default_rng(seed)
    state = dc.AdamState(lr=lr)
    langs = sorted(corpora)
    bias = {l: stream_vocab_bias(corpora[l], ckpt.vocab(l).size) if restrict_vocab else None for l in langs}
    losses = [] if report is None else report.losses
    for step in range(steps):
        lang = langs[step % len(langs)]
        data = corpora[lang]
        idx = rng.integers(0, data.shape[0], size=batch_size)
        loss, _, _ = mlm_loss(model, data[idx], rng, lang, mask_prob, ckpt.vocab(lang).size, use_adapters, bias[lang])
        loss.backward()
        dc.adam_step(ckpt.store, state)
        losses.append(float(loss.data))
    return losses


def mlm_accuracy(ckpt, sentences, language, seed=0, use_adapters=True):
    """Fraction of single masked tokens recovered, masking each non-special
    position of each sentence in turn."""
    model = ckpt.model
    vocab = ckpt.vocab(language)
    ids = _encode_corpus(vocab, sentences, ckpt.cfg.max_text_len)
    correct = total = 0
    for row in ids:
        pos = np.flatnonzero(row >= 5)
        if pos.size == 0:
            continue
        inp = np.repeat(row[None, :], pos.size, axis=0)
        inp[np.arange(pos.size), pos] = 4
        t = int((row != PAD).sum())
        batch = Batch(inp[:, :t], inp[:, :t] != PAD)
        x = model.embed_inputs(batch, language)
        h = model.encoder_forward(x, batch, language, use_adapters=use_adapters, task=False)
        logits = model.mlm_head(h, (np.arange(pos.size), pos), language, n_text=t)
        correct += int((predict(logits) == row[pos]).sum())
        total += pos.size
    return correct / max(total, 1)


# -- phases ----------------------------------------------------------------------

def run_pretrain(cfg, corpora, phase=None, vocab_size=None):
    """Desk-scale stand-in for backbone pretraining.

    FULL_FT and ADA_MULTI get one shared vocabulary over every language in
    ``cfg.languages``; EMB_SWAP and ADA_MONO get a source-only vocabulary.
    The core, embeddings and MLM head are trained by text-only MLM; with a
    shared vocabulary each language predicts only its own tokens (see
    ``PhaseConfig.restrict_vocab``). Adapter variants then train their
    language adapters one language at a time with everything else frozen.
    """
    phase = (phase or PhaseConfig(PhaseKind.PRETRAIN, cfg.variant)).resolved()
    v = cfg.variant
    multilingual = not v.per_language_embedding
    needed = list(cfg.languages) if multilingual else [cfg.source_language]
    missing = [l for l in needed if not corpora.get(l)]
    if missing:
        raise InputError(f"{v.value} pretraining needs corpora for {missing}")
    if not multilingual:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), "languages": [cfg.source_language]})
    vocab_size = vocab_size or phase.vocab_size or (1000 if multilingual else 300)
    if multilingual:
        mixed = [s for l in needed for s in corpora[l]]
        vocabs = {SHARED_LANGUAGE: train_tokenizer(mixed, vocab_size)}
    else:
        vocabs = {cfg.source_language: train_tokenizer(corpora[cfg.source_language], vocab_size)}
    sizes = {k: len(vv) for k, vv in vocabs.items()}
    store = init_store(cfg, sizes, seed=phase.seed)
    ckpt = Checkpoint(cfg, store, vocabs)
    encoded = {l: _encode_corpus(ckpt.vocab(l), corpora[l], cfg.max_text_len) for l in needed}

    report = TrainReport(PhaseKind.PRETRAIN.value, v.value, None, config=phase.to_dict())
    t0 = time.perf_counter()
    report.trainable = apply_freeze_plan(store, freeze_plan(v, PhaseKind.PRETRAIN))
    train_mlm(ckpt, encoded, phase.steps, phase.batch_size, phase.lr, phase.seed,
              phase.mask_prob, use_adapters=False, report=report,
              restrict_vocab=phase.restrict_vocab and multilingual)
    if v.has_language_adapters:
        adapter_steps = phase.adapter_steps if phase.adapter_steps is not None else max(phase.steps // 4, 1)
        for k, lang in enumerate(needed):
            apply_freeze_plan(store, freeze_plan(v, PhaseKind.LANG_EXTEND, lang))
            train_mlm(ckpt, {lang: encoded[lang]}, adapter_steps, phase.batch_size, phase.lr,
                      phase.seed + 1 + k, phase.mask_prob, use_adapters=True, report=report,
                      restrict_vocab=phase.restrict_vocab and multilingual)
    dc.freeze_all(store)
    report.wall_clock_seconds = time.perf_counter() - t0
    return ckpt, report


def run_language_extension(ckpt, target, corpus, phase=None, vocab_size=None):
    """New tokenizer + overlap-initialized embedding (+ language adapter for
    ADA_MONO) for ``target``, trained by MLM with everything else frozen."""
    cfg = ckpt.cfg
    v = cfg.variant
    if v not in (Variant.EMB_SWAP, Variant.ADA_MONO):
        raise ContractError(f"language extension applies to EMB_SWAP/ADA_MONO, not {v.value}")
    if target in ckpt.store.languages(K.TEXT_EMBEDDING):
        raise ContractError(f"{target!r} already has a text embedding")
    if not corpus:
        raise InputError(f"empty corpus for {target!r}")
    phase = (phase or PhaseConfig(PhaseKind.LANG_EXTEND, v, language=target)).resolved()
    src = cfg.source_language
    src_vocab = ckpt.vocab(src)
    vocab = train_tokenizer(corpus, vocab_size or phase.vocab_size or len(src_vocab))
    model = ckpt.model
    emb = init_embeddings_with_overlap(src_vocab, model.token_embedding(src), vocab, seed=phase.seed, dim=cfg.hidden)
    src_bias = model.mlm_bias(src).data
    bias = np.array([src_bias[src_vocab.index[t]] if t in src_vocab.index else 0.0 for t in vocab.tokens])
    tag = GroupTag(K.TEXT_EMBEDDING, target)
    store = ckpt.store
    store.add(f"bank.{target}.emb.tok", emb, tag, False)
    store.add(f"bank.{target}.mlm.bias", bias, tag, False)
    if v.has_language_adapters:
        ltag = GroupTag(K.LANGUAGE_ADAPTER, target)
        for name, val in language_adapter_params(cfg, phase.seed + 17).items():
            store.add(f"bank.{target}.{name}", val, ltag, False)
    sort_banks(store)
    cfg.languages = list(cfg.languages) + [target]
    ckpt.vocabs[target] = vocab

    report = TrainReport(PhaseKind.LANG_EXTEND.value, v.value, target, config=phase.to_dict(),
                         full_scale_regime=full_scale_regime(PhaseKind.LANG_EXTEND, v))
    t0 = time.perf_counter()
    report.trainable = apply_freeze_plan(store, freeze_plan(v, PhaseKind.LANG_EXTEND, target))
    encoded = {target: _encode_corpus(vocab, corpus, cfg.max_text_len)}
    train_mlm(ckpt, encoded, phase.steps, phase.batch_size, phase.lr, phase.seed, phase.mask_prob,
              use_adapters=True, report=report)
    dc.freeze_all(store)
    report.wall_clock_seconds = time.perf_counter() - t0
    return ckpt, report


def _fit_classifier(ckpt, train_enc, dev_enc, language, phase, report, plan):
    """Epoch loop with epoch-end dev selection; the best epoch's weights are
    restored before returning."""
    store = ckpt.store
    report.trainable = apply_freeze_plan(store, plan)
    model = ckpt.model
    rng = np.random.default_rng(phase.seed)
    state = dc.AdamState(lr=phase.lr)
    best = None
    step = 0
    keep = train_enc.labels >= 0
    idx_all = np.flatnonzero(keep)
    for _ in range(phase.epochs):
        order = idx_all[rng.permutation(idx_all.size)]
        for lo in range(0, order.size, phase.batch_size):
            b = train_enc.batch(order[lo:lo + phase.batch_size])
            loss = dc.cross_entropy(model.answer_logits(b, language), b.labels)
            loss.backward()
            dc.adam_step(store, state)
            step += 1
            report.losses.append(float(loss.data))
        acc = evaluate(ckpt, None, None, language, enc=dev_enc).overall
        report.dev_accuracies.append(acc)
        if best is None or acc > best[0]:
            best = (acc, step, {n: store[n].data.copy() for n in report.trainable})
    if best is not None:
        for n, val in best[2].items():
            store[n].data = val
        report.final_dev_accuracy, report.best_step = best[0], best[1]
    dc.freeze_all(store)
    return ckpt


def run_target_task(ckpt, train_records, dev_records, regions, phase=None):
    cfg = ckpt.cfg
    src = cfg.source_language
    bad = [r.question_id for r in list(train_records) + list(dev_records) if r.language != src]
    if bad:
        raise InputError(f"target-task data must be {src!r} only; offending rows: {bad[:5]}")
    phase = (phase or PhaseConfig(PhaseKind.TARGET_TASK, cfg.variant)).resolved()
    if ckpt.answers is None:
        ckpt.answers = build_answer_vocab(train_records)
    if len(ckpt.answers) != cfg.num_answers:
        raise ContractError(f"answer vocabulary has {len(ckpt.answers)} classes but the head has {cfg.num_answers}")
    swap_language(ckpt.store, cfg.variant, src)
    report = TrainReport(PhaseKind.TARGET_TASK.value, cfg.variant.value, src, config=phase.to_dict(),
                         full_scale_regime=full_scale_regime(PhaseKind.TARGET_TASK, cfg.variant))
    t0 = time.perf_counter()
    train_enc = encode_records(ckpt, train_records, regions)
    dev_enc = encode_records(ckpt, dev_records, regions)
    _fit_classifier(ckpt, train_enc, dev_enc, src, phase, report, freeze_plan(cfg.variant, PhaseKind.TARGET_TASK))
    report.wall_clock_seconds = time.perf_counter() - t0
    return ckpt, report


def zero_shot_model(ckpt, target, donor=None):
    """Copy of ``ckpt`` with ``target``'s language-specific groups swapped in."""
    out = ckpt.clone()
    swap_language(out.store, out.cfg.variant, target, donor=donor)
    return out


def run_zero_shot(ckpt, target, test_records, regions, donor=None):
    """Swap to ``target`` on a copy and evaluate; ``ckpt`` is not modified."""
    swapped = zero_shot_model(ckpt, target, donor)
    return evaluate(swapped, test_records, regions, target)


def run_few_shot(ckpt, target, split_sizes, plan, records, regions, phase=None, dev_records=None, test_records=None):
    """Per split size: fine-tune the zero-shot model on ``TRAIN_k`` target
    questions with the target-task freeze plan, select on target dev, and
    evaluate on target test. Returns ({k: EvalResult}, {k: TrainReport}); k=0
    is the zero-shot result."""
    cfg = ckpt.cfg
    phase = (phase or PhaseConfig(PhaseKind.FEW_SHOT, cfg.variant, language=target)).resolved()
    plan.check_integrity()
    held_out = set(plan.images("TEST")) | set(plan.images("DEV"))
    for k in split_sizes:
        name = f"TRAIN_{k}"
        if name not in plan.splits:
            raise SplitError(f"split plan has no {name}")
        overlap = held_out & set(plan.images(name))
        if overlap:
            raise SplitError(f"{name} overlaps dev/test images: {sorted(overlap)[:5]}")
    tgt = [r for r in records if r.language == target]
    dev_records = dev_records if dev_records is not None else plan.records("DEV", tgt)
    test_records = test_records if test_records is not None else plan.records("TEST", tgt)
    base = zero_shot_model(ckpt, target)
    test_enc = encode_records(base, test_records, regions)
    dev_enc = encode_records(base, dev_records, regions)
    results = {0: evaluate(base, None, None, target, enc=test_enc)}
    reports = {}
    for k in split_sizes:
        train = plan.records(f"TRAIN_{k}", tgt)
        if not train:
            raise SplitError(f"TRAIN_{k} has no {target} questions")
        model_k = base.clone()
        report = TrainReport(PhaseKind.FEW_SHOT.value, cfg.variant.value, target, config={**phase.to_dict(), "split_size": k},
                             full_scale_regime=full_scale_regime(PhaseKind.FEW_SHOT, cfg.variant))
        t0 = time.perf_counter()
        _fit_classifier(model_k, encode_records(model_k, train, regions), dev_enc, target, phase, report,
                        freeze_plan(cfg.variant, PhaseKind.FEW_SHOT, target))
        report.wall_clock_seconds = time.perf_counter() - t0
        results[k] = evaluate(model_k, None, None, target, enc=test_enc)
        reports[k] = report
    return results, reports


def current_language(ckpt):
    v = ckpt.cfg.variant
    if v.per_language_embedding:
        return active_language(ckpt.store, K.TEXT_EMBEDDING)
    if v.has_language_adapters:
        return active_language(ckpt.store, K.LANGUAGE_ADAPTER)
    return ckpt.cfg.source_language


__all__ = [
    "EvalResult", "FreezePlan", "PhaseConfig", "PhaseKind", "TrainReport", "apply_freeze_plan", "encode_records",
    "evaluate", "freeze_plan", "mlm_accuracy", "full_scale_regime", "run_few_shot", "run_language_extension",
    "run_pretrain", "run_target_task", "run_zero_shot", "train_mlm", "zero_shot_model",
]

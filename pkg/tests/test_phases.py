import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmm import diffcore as dc
from xmm.checkpoint import Checkpoint
from xmm.data import SplitError, SplitPlan
from xmm.data.synth import generate_corpus, source_lexicon
from xmm.diffcore import ContractError, GroupKind
from xmm.model import ArchSetting, ModelConfig, Variant
from xmm.phases import (
    FULL_SCALE_FEW_SHOT_LR_GRID,
    InputError,
    PhaseConfig,
    PhaseKind,
    TrainReport,
    apply_freeze_plan,
    evaluate,
    freeze_plan,
    mlm_accuracy,
    full_scale_regime,
    run_few_shot,
    run_language_extension,
    run_pretrain,
    run_target_task,
    run_zero_shot,
)

from conftest import small_run
from helpers import overfit_steps, tiny_checkpoint, toy_checkpoint, toy_task

K = GroupKind
ALL = set(GroupKind)
TASK_ADAPTERS = {K.TASK_ADAPTER_TEXT, K.TASK_ADAPTER_IMAGE, K.ALIGNMENT_ADAPTER, K.PREDICTION_HEAD}

# documented plans: kind set, plus the language constraint for language-bound kinds
DOCUMENTED = {
    (Variant.FULL_FT, PhaseKind.LANG_EXTEND): set(),
    (Variant.EMB_SWAP, PhaseKind.LANG_EXTEND): {K.TEXT_EMBEDDING},
    (Variant.ADA_MONO, PhaseKind.LANG_EXTEND): {K.TEXT_EMBEDDING, K.LANGUAGE_ADAPTER},
    (Variant.ADA_MULTI, PhaseKind.LANG_EXTEND): {K.LANGUAGE_ADAPTER},
    (Variant.FULL_FT, PhaseKind.TARGET_TASK): ALL,
    (Variant.EMB_SWAP, PhaseKind.TARGET_TASK): {K.CORE_TRANSFORMER, K.PREDICTION_HEAD},
    (Variant.ADA_MONO, PhaseKind.TARGET_TASK): TASK_ADAPTERS,
    (Variant.ADA_MULTI, PhaseKind.TARGET_TASK): TASK_ADAPTERS | {K.IMAGE_PROJECTION},
}
for v in Variant:
    DOCUMENTED[(v, PhaseKind.FEW_SHOT)] = DOCUMENTED[(v, PhaseKind.TARGET_TASK)]


def documented_names(store, variant, phase, language="x1"):
    kinds = DOCUMENTED[(variant, phase)]
    out = set()
    for n, e in store.items():
        if e.group.kind not in kinds:
            continue
        if phase == PhaseKind.LANG_EXTEND and e.group.language != language:
            continue
        out.add(n)
    return out


def _task_batch(ck, rng):
    records, regions = toy_task(8, seed=int(rng.integers(1000)))
    from xmm.phases import encode_records
    enc = encode_records(ck, records, regions, "en")
    return enc.batch(np.arange(8))


def run_plan_steps(variant, phase, steps=50, seed=0):
    """Apply the plan and take ``steps`` Adam steps on the phase's loss;
    returns (store before, store after, trainable names)."""
    from xmm.phases import mlm_loss
    ck = tiny_checkpoint(variant, seed=seed)
    rng = np.random.default_rng(seed)
    names = apply_freeze_plan(ck.store, freeze_plan(variant, phase, "x1"))
    before = ck.store.snapshot()
    state = dc.AdamState(lr=1e-2)
    lang = "x1" if phase == PhaseKind.LANG_EXTEND else "en"
    for _ in range(steps):
        if phase == PhaseKind.LANG_EXTEND:
            ids = rng.integers(5, 12, size=(4, 6))
            ids[:, 0], ids[:, -1] = 2, 3
            loss, _, _ = mlm_loss(ck.model, ids, rng, lang, 0.3, 12, use_adapters=True)
        else:
            b = _task_batch(ck, rng)
            loss = dc.cross_entropy(ck.model.answer_logits(b, lang), b.labels)
        loss.backward()
        dc.adam_step(ck.store, state)
    return ck, before, names


@pytest.mark.parametrize("phase", [PhaseKind.LANG_EXTEND, PhaseKind.TARGET_TASK, PhaseKind.FEW_SHOT])
@pytest.mark.parametrize("variant", list(Variant))
def test_freeze_plan_names_and_frozen_bytes(variant, phase):
    ck, before, names = run_plan_steps(variant, phase)
    assert set(names) == documented_names(ck.store, variant, phase)
    after = ck.store.snapshot()
    frozen = set(after) - set(names)
    assert all(after[n] == before[n] for n in frozen)
    if names:
        assert any(after[n] != before[n] for n in names)


def test_ada_mono_task_plan_is_adapters_and_head():
    ck = tiny_checkpoint(Variant.ADA_MONO)
    names = apply_freeze_plan(ck.store, freeze_plan(Variant.ADA_MONO, PhaseKind.TARGET_TASK))
    assert names and all(".task." in n or ".align." in n or n.startswith("head.") for n in names)
    expected = sorted(n for n in ck.store if ".task." in n or ".align." in n or n.startswith("head."))
    assert names == expected


def test_freeze_plan_deterministic():
    ck = tiny_checkpoint(Variant.ADA_MULTI)
    p = freeze_plan(Variant.ADA_MULTI, PhaseKind.TARGET_TASK)
    assert apply_freeze_plan(ck.store, p) == apply_freeze_plan(ck.store.clone(), p)
    with pytest.raises(ContractError):
        freeze_plan(Variant.ADA_MONO, PhaseKind.LANG_EXTEND)


# -- configs ------------------------------------------------------------------------

def test_phase_config_resolution_and_full_scale_echo():
    ext = PhaseConfig(PhaseKind.LANG_EXTEND, Variant.EMB_SWAP).resolved()
    assert (ext.steps, ext.batch_size, ext.lr) == (100_000, 64, 1e-4)
    task = PhaseConfig(PhaseKind.TARGET_TASK, Variant.ADA_MONO).resolved()
    assert (task.batch_size, task.epochs, task.lr) == (192, 5, 1e-4)
    assert PhaseConfig(PhaseKind.TARGET_TASK, Variant.FULL_FT).resolved().lr == 3e-5
    fs = PhaseConfig(PhaseKind.FEW_SHOT, Variant.EMB_SWAP).resolved()
    assert fs.lr_grid == (1e-5, 5e-5) and fs.lr == 5e-5 and fs.epochs == 10
    assert FULL_SCALE_FEW_SHOT_LR_GRID[Variant.ADA_MULTI] == (5e-5, 1e-4)
    assert full_scale_regime(PhaseKind.FEW_SHOT, Variant.ADA_MONO)["epoch_grid"] == [5, 10]
    desk = PhaseConfig(PhaseKind.LANG_EXTEND, Variant.EMB_SWAP, steps=300, lr=1e-3).resolved()
    assert (desk.steps, desk.batch_size, desk.lr) == (300, 64, 1e-3)


def test_phase_config_steps_xor_epochs():
    with pytest.raises(ValueError):
        PhaseConfig(PhaseKind.TARGET_TASK, steps=10, epochs=2).check()
    with pytest.raises(ValueError):
        PhaseConfig(PhaseKind.TARGET_TASK, steps=10).resolved()
    with pytest.raises(ValueError):
        PhaseConfig(PhaseKind.LANG_EXTEND, epochs=1).resolved()
    with pytest.raises(ValueError):
        PhaseConfig.from_dict({"kind": "PRETRAIN", "nope": 1})


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(PhaseKind)), st.sampled_from(list(Variant)), st.integers(0, 10**6))
def test_phase_config_dict_round_trip(kind, variant, seed):
    cfg = PhaseConfig(kind, variant, seed=seed).resolved()
    assert PhaseConfig.from_dict(cfg.to_dict()) == cfg


# -- pretraining and extension --------------------------------------------------------

def _cfg(variant, languages=("en", "x1"), **kw):
    base = dict(num_layers=1, hidden=32, heads=2, ffn_dim=64, max_text_len=16, num_answers=4,
                languages=list(languages), variant=variant)
    base.update(kw)
    return ModelConfig(**base)


def test_pretrain_memorizes_small_corpus():
    # random word sequences: every masked token is recoverable only by memorizing its sentence
    rng = np.random.default_rng(0)
    lex = sorted(source_lexicon())
    corpus = [" ".join(rng.choice(lex, size=4)) for _ in range(500)]
    cfg = _cfg(Variant.EMB_SWAP, ("en",), num_layers=1, hidden=128, heads=4, ffn_dim=512, max_text_len=8)
    phase = PhaseConfig(PhaseKind.PRETRAIN, Variant.EMB_SWAP, steps=4000, batch_size=64, lr=1e-3, mask_prob=0.25)
    ck, report = run_pretrain(cfg, {"en": corpus}, phase, vocab_size=200)
    assert mlm_accuracy(ck, corpus[:200], "en", use_adapters=False) > 0.9
    assert all(np.isfinite(report.losses))


def test_pretrain_variant_contracts():
    corpora = {"en": generate_corpus(1, 60), "x1": generate_corpus(2, 60)}
    ph = PhaseConfig(PhaseKind.PRETRAIN, steps=5, batch_size=4, adapter_steps=0)
    emb, _ = run_pretrain(_cfg(Variant.EMB_SWAP), corpora, ph, vocab_size=60)
    assert emb.store.languages(K.LANGUAGE_ADAPTER) == []
    assert emb.cfg.languages == ["en"]
    with pytest.raises(InputError):
        run_pretrain(_cfg(Variant.ADA_MULTI), {"en": corpora["en"]}, ph, vocab_size=60)


def test_pretrain_adapter_stage_leaves_core_untouched():
    corpora = {"en": generate_corpus(1, 60), "x1": generate_corpus(2, 60)}
    cfg = _cfg(Variant.ADA_MULTI)
    core = lambda g: g.kind != K.LANGUAGE_ADAPTER
    a, _ = run_pretrain(cfg, corpora, PhaseConfig(PhaseKind.PRETRAIN, steps=20, batch_size=4, adapter_steps=0),
                        vocab_size=60)
    b, _ = run_pretrain(cfg, corpora, PhaseConfig(PhaseKind.PRETRAIN, steps=20, batch_size=4, adapter_steps=15),
                        vocab_size=60)
    assert a.store.snapshot(core) == b.store.snapshot(core)
    assert a.store.snapshot(lambda g: g.kind == K.LANGUAGE_ADAPTER) != b.store.snapshot(
        lambda g: g.kind == K.LANGUAGE_ADAPTER)
    assert b.store.trainable_names() == []


@pytest.mark.parametrize("variant", [Variant.EMB_SWAP, Variant.ADA_MONO])
def test_language_extension(variant):
    src = generate_corpus(1, 300)
    ck, _ = run_pretrain(_cfg(variant), {"en": src},
                         PhaseConfig(PhaseKind.PRETRAIN, steps=300, batch_size=16), vocab_size=150)
    from xmm.data.synth import make_cipher
    cipher = make_cipher(1)
    corpus = [cipher.translate_text(s) for s in generate_corpus(9, 300)]
    keep = lambda g: not (g.language == "x1")
    before = ck.store.snapshot(keep)
    phase = PhaseConfig(PhaseKind.LANG_EXTEND, variant, steps=300, batch_size=32, lr=1e-3, language="x1")
    ck, report = run_language_extension(ck, "x1", corpus, phase)
    assert ck.store.snapshot(keep) == before
    assert report.full_scale_regime == {"steps": 100_000, "batch_size": 64, "lr": 1e-4}
    windows = np.array(report.losses).reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(windows) < 0)
    assert "x1" in ck.cfg.languages and "x1" in ck.vocabs
    with pytest.raises(ContractError):
        run_language_extension(ck, "x1", corpus, phase)


def test_language_extension_wrong_variant():
    ck = tiny_checkpoint(Variant.ADA_MULTI)
    with pytest.raises(ContractError):
        run_language_extension(ck, "x2", ["a b"])


# -- target task ------------------------------------------------------------------------

@pytest.mark.parametrize("variant,limit", [(Variant.ADA_MULTI, 200), (Variant.FULL_FT, 150)])
def test_overfit_twenty_questions(variant, limit):
    step, report = overfit_steps(variant, limit)
    assert step is not None and step <= limit
    assert report.final_dev_accuracy == 1.0


def test_target_task_freeze_and_selection():
    records, regions = toy_task(20)
    ck = toy_checkpoint(Variant.ADA_MONO)
    frozen = lambda g: g.kind in (K.CORE_TRANSFORMER, K.TEXT_EMBEDDING, K.LANGUAGE_ADAPTER)
    before = ck.store.snapshot(frozen)
    phase = PhaseConfig(PhaseKind.TARGET_TASK, Variant.ADA_MONO, epochs=6, batch_size=8, lr=1e-2)
    ck, report = run_target_task(ck, records, records[:10], regions, phase)
    assert ck.store.snapshot(frozen) == before
    assert report.final_dev_accuracy == max(report.dev_accuracies)
    assert report.full_scale_regime == {"epochs": 5, "batch_size": 192, "lr": 1e-4}
    # the retained weights are the best epoch's
    assert evaluate(ck, records[:10], regions, "en").overall == report.final_dev_accuracy


def test_target_task_rejects_target_rows():
    records, regions = toy_task(6)
    bad = records[:5] + [toy_task(1, language="x1")[0][0]]
    with pytest.raises(InputError):
        run_target_task(toy_checkpoint(Variant.ADA_MULTI), bad, records, regions)


def test_train_report_round_trip(tmp_path):
    r = TrainReport("TARGET_TASK", "ADA_MULTI", "en", losses=[1.0, 0.5], dev_accuracies=[0.2],
                    final_dev_accuracy=0.2, best_step=2, wall_clock_seconds=1.5)
    r.to_json(tmp_path / "r.json")
    r.to_csv(tmp_path / "r.csv")
    assert TrainReport.from_json(tmp_path / "r.json") == r
    assert (tmp_path / "r.csv").read_text() == "step,loss\n1,1.0\n2,0.5\n"


def test_target_task_reproducible():
    records, regions = toy_task(20)
    reps = []
    for _ in range(2):
        ck = toy_checkpoint(Variant.ADA_MULTI)
        phase = PhaseConfig(PhaseKind.TARGET_TASK, Variant.ADA_MULTI, epochs=3, batch_size=8, lr=1e-3)
        _, rep = run_target_task(ck, records, records, regions, phase)
        reps.append(rep.deterministic_view())
    assert reps[0] == reps[1]


# -- zero-shot and few-shot ------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(small_data_dir, small_ds, tmp_path_factory):
    from xmm.experiment import build_task_model
    run = small_run(small_data_dir, tmp_path_factory.mktemp("run"))
    return {v: build_task_model(run, small_ds, v)[0] for v in Variant}, run


@pytest.mark.parametrize("variant", list(Variant))
def test_zero_shot_pure_and_self_transfer(trained, small_ds, variant):
    ck = trained[0][variant]
    before = ck.store.snapshot()
    res = run_zero_shot(ck, "x1", small_ds.test("x1"), small_ds.regions)
    assert ck.store.snapshot() == before
    assert 0.0 <= res.overall <= 1.0
    src = run_zero_shot(ck, "en", small_ds.test("en"), small_ds.regions)
    direct = evaluate(ck, small_ds.test("en"), small_ds.regions, "en")
    assert src.overall == direct.overall and ck.store.snapshot() == before


def test_few_shot_sizes_and_integrity(trained, small_ds):
    ck = trained[0][Variant.ADA_MULTI]
    run = trained[1]
    phase = run.phase(PhaseKind.FEW_SHOT, Variant.ADA_MULTI, "x1")
    results, reports = run_few_shot(ck, "x1", [1, 48], small_ds.plan, small_ds.xgqa["x1"], small_ds.regions, phase)
    assert sorted(results) == [0, 1, 48] and sorted(reports) == [1, 48]
    assert all(r.final_dev_accuracy == max(r.dev_accuracies) for r in reports.values())
    splits = {k: list(v) for k, v in small_ds.plan.splits.items()}
    splits["TRAIN_1"] = [small_ds.plan.images("TEST")[0]]
    bad = SplitPlan(splits, small_ds.plan.seed)
    with pytest.raises(SplitError):
        run_few_shot(ck, "x1", [1], bad, small_ds.xgqa["x1"], small_ds.regions, phase)


def test_few_shot_missing_split_size(trained, small_ds):
    ck = trained[0][Variant.FULL_FT]
    with pytest.raises(SplitError):
        run_few_shot(ck, "x1", [7], small_ds.plan, small_ds.xgqa["x1"], small_ds.regions)

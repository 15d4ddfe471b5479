"""Shared fixtures-as-functions: finite differences and tiny models."""

import numpy as np

from xmm import diffcore as dc
from xmm.checkpoint import Checkpoint
from xmm.data.schema import AnswerVocab, QuestionRecord, RegionSet, StructuralType
from xmm.model import SHARED_LANGUAGE, ArchSetting, Batch, ModelConfig, Variant, init_store
from xmm.textproc import SPECIALS, Vocab


def numeric_grad(f, x, h=1e-4):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def gradcheck(op, arrays, rng, h=1e-4):
    """Max relative error between analytic and numeric gradients of
    ``sum(op(*tensors) * R)`` over every input array."""
    tensors = [dc.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    weights = rng.normal(size=out.shape)
    dc.backward(dc.total(out * weights))

    worst = 0.0
    for k, t in enumerate(tensors):
        x = arrays[k].copy()

        def f():
            args = [dc.Tensor(x if j == k else arrays[j]) for j in range(len(arrays))]
            return float((op(*args).data * weights).sum())

        num = numeric_grad(f, x, h)
        ana = t.grad if t.grad is not None else np.zeros_like(x)
        worst = max(worst, rel_error(ana, num))
    return worst


def random_shape(rng, ndim, lo=1, hi=5):
    return tuple(int(n) for n in rng.integers(lo, hi + 1, size=ndim))


def _gc_matmul(rng):
    m, k, n = random_shape(rng, 3)
    return dc.matmul, [rng.normal(size=(m, k)), rng.normal(size=(k, n))]


def _gc_matmul_batched(rng):
    b, m, k, n = random_shape(rng, 4, hi=4)
    return dc.matmul, [rng.normal(size=(b, m, k)), rng.normal(size=(b, k, n))]


def _gc_matmul_weight(rng):
    b, m, k, n = random_shape(rng, 4, hi=4)
    return dc.matmul, [rng.normal(size=(b, m, k)), rng.normal(size=(k, n))]


def _gc_binary(fn):
    def make(rng):
        shape = random_shape(rng, int(rng.integers(1, 4)))
        other = shape[1:] if len(shape) > 1 and rng.random() < 0.5 else shape  # broadcasting half the time
        return fn, [rng.normal(size=shape), rng.normal(size=other)]
    return make


def _gc_unary(fn):
    def make(rng):
        return fn, [rng.normal(size=random_shape(rng, int(rng.integers(1, 4))))]
    return make


def _gc_softmax(rng):
    shape = random_shape(rng, 2, hi=6)
    bias = np.where(rng.random(shape) < 0.2, -1e30, 0.0)
    bias[:, 0] = 0.0
    return (lambda x: dc.softmax(x, axis=-1, bias=bias)), [rng.normal(size=shape)]


def _gc_layer_norm(rng):
    m, d = random_shape(rng, 2, lo=2, hi=6)
    return dc.layer_norm, [rng.normal(size=(m, d)), rng.normal(size=d), rng.normal(size=d)]


def _gc_cross_entropy(rng):
    n, c = random_shape(rng, 2, lo=2, hi=6)
    labels = rng.integers(0, c, size=n)
    return (lambda x: dc.cross_entropy(x, labels)), [rng.normal(size=(n, c))]


def _gc_cross_entropy_single(rng):
    c = int(rng.integers(2, 8))
    label = int(rng.integers(c))
    return (lambda x: dc.cross_entropy(x, label)), [rng.normal(size=c)]


def _gc_reshape(rng):
    a, b = random_shape(rng, 2)
    return (lambda x: dc.reshape(x, (b, a))), [rng.normal(size=(a, b))]


def _gc_transpose(rng):
    shape = random_shape(rng, 3, hi=4)
    axes = tuple(rng.permutation(3))
    return (lambda x: dc.transpose(x, axes)), [rng.normal(size=shape)]


def _gc_slice(rng):
    m, n = random_shape(rng, 2, lo=2, hi=6)
    lo = int(rng.integers(0, m - 1))
    return (lambda x: x[lo:, : n - 1 or 1]), [rng.normal(size=(m, n))]


def _gc_fancy(rng):
    m, n = random_shape(rng, 2, lo=2, hi=6)
    rows = rng.integers(0, m, size=4)  # repeats exercise scatter-add
    cols = rng.integers(0, n, size=4)
    return (lambda x: x[rows, cols]), [rng.normal(size=(m, n))]


def _gc_concat(rng):
    m, n, p = random_shape(rng, 3)
    return (lambda a, b: dc.concat([a, b], axis=1)), [rng.normal(size=(m, n)), rng.normal(size=(m, p))]


def _gc_embedding(rng):
    v, d = random_shape(rng, 2, lo=2, hi=6)
    ids = rng.integers(0, v, size=(2, 5))
    return (lambda t: dc.embedding(t, ids)), [rng.normal(size=(v, d))]


GRADIENT_CASES = {
    "add": _gc_binary(dc.add),
    "sub": _gc_binary(dc.sub),
    "mul": _gc_binary(dc.mul),
    "matmul": _gc_matmul,
    "matmul_batched": _gc_matmul_batched,
    "matmul_weight": _gc_matmul_weight,
    "total": _gc_unary(dc.total),
    "mean": _gc_unary(dc.mean),
    "gelu": _gc_unary(dc.gelu),
    "reshape": _gc_reshape,
    "transpose": _gc_transpose,
    "slice": _gc_slice,
    "fancy_index": _gc_fancy,
    "concat": _gc_concat,
    "embedding": _gc_embedding,
    "softmax": _gc_softmax,
    "layer_norm": _gc_layer_norm,
    "cross_entropy": _gc_cross_entropy,
    "cross_entropy_single": _gc_cross_entropy_single,
}


# -- tiny models -----------------------------------------------------------------

LANGS = ["en", "x1"]


def tiny_config(variant=Variant.ADA_MULTI, setting=ArchSetting.S5, languages=LANGS, **kw):
    base = dict(num_layers=2, hidden=8, heads=2, ffn_dim=16, adapter_reduction=2, max_text_len=8,
                max_regions=4, region_feature_dim=5, num_answers=4, languages=list(languages),
                arch_setting=setting, variant=variant)
    base.update(kw)
    return ModelConfig(**base)


def tiny_vocab(n=12):
    return Vocab(list(SPECIALS) + [f"w{i}" for i in range(n - 5)])


def tiny_checkpoint(variant=Variant.ADA_MULTI, setting=ArchSetting.S5, seed=0, languages=LANGS, **kw):
    cfg = tiny_config(variant, setting, languages, **kw)
    vocab = tiny_vocab()
    if Variant(variant).per_language_embedding:
        vocabs = {l: vocab for l in cfg.languages}
    else:
        vocabs = {SHARED_LANGUAGE: vocab}
    store = init_store(cfg, {k: len(v) for k, v in vocabs.items()}, seed=seed)
    answers = AnswerVocab([f"a{i}" for i in range(cfg.num_answers)])
    return Checkpoint(cfg, store, vocabs, answers)


def randomize_adapters(store, rng, scale=0.3):
    """Give every adapter up-projection nonzero weights so routing is visible."""
    for name, e in store.items():
        if ".up." in name:
            e.tensor.data = rng.normal(0.0, scale, e.tensor.shape)


def random_batch(cfg, rng, b=3, t=6, n=3, vocab_size=12):
    ids = rng.integers(5, vocab_size, size=(b, t))
    ids[:, 0] = 2
    ids[:, -1] = 3
    feats = rng.normal(size=(b, n, cfg.region_feature_dim))
    boxes = rng.random(size=(b, n, 6))
    return Batch(ids, np.ones((b, t), bool), feats, boxes, np.ones((b, n), bool))


def toy_task(n=20, seed=0, num_answers=4, language="en", regions_per_image=3, feat_dim=5):
    """``n`` questions over ``n`` images whose answer is readable from both
    the text and the image, for overfitting checks."""
    rng = np.random.default_rng(seed)
    records, regions = [], {}
    types = list(StructuralType)
    for i in range(n):
        a = int(rng.integers(num_answers))
        words = " ".join(f"w{int(x)}" for x in rng.integers(0, 7, size=3))
        img = f"img{i:03d}"
        records.append(QuestionRecord(f"q{i:03d}", img, f"{words} w{a}", language, f"a{a}", types[i % 5]))
        feats = rng.normal(0, 0.1, size=(regions_per_image, feat_dim))
        feats[:, a % feat_dim] += 1.0
        boxes = np.tile([0.0, 0.0, 0.5, 0.5, 0.5, 0.5], (regions_per_image, 1))
        regions[img] = RegionSet(img, feats, boxes)
    return records, regions


def dir_digest(root):
    """sha256 over every file path and content under ``root``."""
    import hashlib
    from pathlib import Path

    h = hashlib.sha256()
    root = Path(root)
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def toy_checkpoint(variant, seed=0):
    """Untrained desk-width model over :func:`toy_task` inputs."""
    cfg = ModelConfig(num_layers=2, hidden=64, heads=4, ffn_dim=128, max_text_len=16, num_answers=4,
                      languages=["en"], region_feature_dim=5, max_regions=4, variant=variant)
    vocab = tiny_vocab()
    key = "en" if Variant(variant).per_language_embedding else SHARED_LANGUAGE
    store = init_store(cfg, {key: len(vocab)}, seed=seed)
    return Checkpoint(cfg, store, {key: vocab}, AnswerVocab([f"a{i}" for i in range(4)]))


def overfit_steps(variant, max_steps, lr=3e-3):
    """Full-batch steps until 100% train accuracy on 20 toy questions (None
    if never reached), plus the training report."""
    from xmm.phases import PhaseConfig, PhaseKind, run_target_task

    records, regions = toy_task(20)
    ck = toy_checkpoint(variant)
    phase = PhaseConfig(PhaseKind.TARGET_TASK, variant, epochs=max_steps, batch_size=20, lr=lr)
    ck, report = run_target_task(ck, records, records, regions, phase)
    hits = [i + 1 for i, a in enumerate(report.dev_accuracies) if a == 1.0]
    return (hits[0] if hits else None), report

"""Multimodal transformer encoder with modality-split adapters.

Parameter layout (names in the :class:`ParameterStore`)::

    emb.tok, mlm.bias                 TEXT_EMBEDDING(active language)
    emb.pos, emb.seg, emb.ln.*        CORE_TRANSFORMER
    img.feat.*, img.box.*             IMAGE_PROJECTION
    enc.{i}.attn.*, ffn.*, ln1/ln2.*  CORE_TRANSFORMER
    enc.{i}.lang.*                    LANGUAGE_ADAPTER(active language)
    enc.{i}.task.text.*               TASK_ADAPTER_TEXT
    enc.{i}.task.image.*              TASK_ADAPTER_IMAGE
    enc.{i}.align.* / task.joint.*    ALIGNMENT_ADAPTER
    mlm.dense.*, mlm.ln.*             MLM_HEAD
    head.*                            PREDICTION_HEAD

Language-specific groups of inactive languages live under
``bank.{lang}.<slot name>``. :func:`swap_language` moves them in and out of
the live slots; the forward pass can also read a banked language directly.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, GroupKind, GroupTag, ParameterStore
from .textproc import PAD

SHARED_LANGUAGE = "multi"
TEXT, IMAGE = 0, 1


class SwapError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigurationError(RuntimeError):
    pass


class InputError(ValueError):
    pass


class ArchSetting(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"


class Variant(str, enum.Enum):
    FULL_FT = "FULL_FT"
    EMB_SWAP = "EMB_SWAP"
    ADA_MONO = "ADA_MONO"
    ADA_MULTI = "ADA_MULTI"

    @property
    def per_language_embedding(self):
        return self in (Variant.EMB_SWAP, Variant.ADA_MONO)

    @property
    def has_language_adapters(self):
        return self in (Variant.ADA_MONO, Variant.ADA_MULTI)

    @property
    def has_task_adapters(self):
        return self in (Variant.ADA_MONO, Variant.ADA_MULTI)


@dataclass
class ModelConfig:
    num_layers: int = 4
    hidden: int = 64
    heads: int = 4
    ffn_dim: int = 256
    adapter_reduction: int = 2
    max_text_len: int = 24
    max_regions: int = 9
    region_feature_dim: int = 12
    box_dim: int = 6
    num_answers: int = 16
    languages: list = field(default_factory=lambda: ["en"])
    arch_setting: ArchSetting = ArchSetting.S5
    variant: Variant = Variant.ADA_MULTI
    source_language: str = "en"

    def __post_init__(self):
        self.arch_setting = ArchSetting(self.arch_setting)
        self.variant = Variant(self.variant)
        self.languages = list(self.languages)
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.hidden % self.adapter_reduction:
            raise ValueError("adapter_reduction must divide hidden")
        if self.num_answers < 2:
            raise ValueError("num_answers must be at least 2")
        if self.box_dim != 6:
            raise ValueError("boxes carry exactly 6 values")

    @property
    def adapter_dim(self):
        return self.hidden // self.adapter_reduction

    def to_dict(self):
        d = asdict(self)
        d["arch_setting"] = self.arch_setting.value
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    """Padded model input. ``text_mask``/``region_mask`` mark real positions."""

    ids: np.ndarray                 # [B, T] int
    text_mask: np.ndarray           # [B, T] bool
    feats: np.ndarray | None = None  # [B, N, f]
    boxes: np.ndarray | None = None  # [B, N, 6]
    region_mask: np.ndarray | None = None  # [B, N] bool
    labels: np.ndarray | None = None

    @property
    def size(self):
        return self.ids.shape[0]

    @property
    def n_text(self):
        return self.ids.shape[1]

    @property
    def n_regions(self):
        return 0 if self.feats is None else self.feats.shape[1]

    def modality_mask(self):
        return np.array([TEXT] * self.n_text + [IMAGE] * self.n_regions)

    def key_mask(self):
        if self.feats is None:
            return self.text_mask
        return np.concatenate([self.text_mask, self.region_mask], axis=1)


def make_input(ids, feats=None, boxes=None, max_regions=None):
    """Single-example :class:`Batch` from a token id list and region arrays."""
    ids = np.asarray(ids, dtype=np.int64)[None, :]
    text_mask = ids != PAD
    text_mask[:, 0] = True
    if feats is None:
        return Batch(ids, text_mask)
    feats = np.asarray(feats, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    if max_regions is not None and feats.shape[0] > max_regions:
        raise InputError(f"{feats.shape[0]} regions exceeds max_regions={max_regions}")
    return Batch(ids, text_mask, feats[None], boxes[None], np.ones((1, feats.shape[0]), bool))


# -- parameter construction ---------------------------------------------------

def _adapter_params(d, r, rng):
    return {
        "down.w": rng.normal(0.0, 0.02, (d, r)),
        "down.b": np.zeros(r),
        "up.w": np.zeros((r, d)),
        "up.b": np.zeros(d),
    }


def adapter_names(prefix):
    return [f"{prefix}.{k}" for k in ("down.w", "down.b", "up.w", "up.b")]


def language_adapter_params(cfg, seed):
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(cfg.num_layers):
        for k, v in _adapter_params(cfg.hidden, cfg.adapter_dim, rng).items():
            out[f"enc.{i}.lang.{k}"] = v
    return out


def init_store(cfg, vocab_sizes, seed=0):
    """Fresh parameters for ``cfg``.

    ``vocab_sizes`` maps language -> vocabulary size; shared-embedding
    variants use the single key :data:`SHARED_LANGUAGE`. The first language of
    ``cfg.languages`` (the source) occupies the live slots.
    """
    rng = np.random.default_rng(seed)
    # adapters draw from their own stream so the rest of the initialization
    # does not depend on which adapters a setting has
    arng = np.random.default_rng([seed, 1])
    d, v = cfg.hidden, cfg.variant
    store = ParameterStore()
    core = GroupTag(GroupKind.CORE_TRANSFORMER)

    def normal(*shape):
        return rng.normal(0.0, 0.02, shape)

    if v.per_language_embedding:
        emb_langs = [cfg.source_language] + [l for l in cfg.languages if l != cfg.source_language]
    else:
        emb_langs = [SHARED_LANGUAGE]
    missing = [l for l in emb_langs if l not in vocab_sizes]
    if missing:
        raise ConfigurationError(f"no vocabulary size for {missing}")
    emb = {l: (normal(vocab_sizes[l], d), np.zeros(vocab_sizes[l])) for l in emb_langs}

    def add_embedding(lang, prefix=""):
        tag = GroupTag(GroupKind.TEXT_EMBEDDING, lang)
        store.add(prefix + "emb.tok", emb[lang][0], tag, True)
        store.add(prefix + "mlm.bias", emb[lang][1], tag, True)

    add_embedding(emb_langs[0])
    store.add("emb.pos", normal(cfg.max_text_len, d), core)
    store.add("emb.seg", normal(2, d), core)
    store.add("emb.ln.g", np.ones(d), core)
    store.add("emb.ln.b", np.zeros(d), core)
    proj = GroupTag(GroupKind.IMAGE_PROJECTION)
    store.add("img.feat.w", normal(cfg.region_feature_dim, d), proj)
    store.add("img.feat.b", np.zeros(d), proj)
    store.add("img.box.w", normal(cfg.box_dim, d), proj)
    store.add("img.box.b", np.zeros(d), proj)

    for i in range(cfg.num_layers):
        p = f"enc.{i}"
        for m in ("q", "k", "v", "o"):
            store.add(f"{p}.attn.{m}.w", normal(d, d), core)
            store.add(f"{p}.attn.{m}.b", np.zeros(d), core)
        store.add(f"{p}.ln1.g", np.ones(d), core)
        store.add(f"{p}.ln1.b", np.zeros(d), core)
        store.add(f"{p}.ffn.w1", normal(d, cfg.ffn_dim), core)
        store.add(f"{p}.ffn.b1", np.zeros(cfg.ffn_dim), core)
        store.add(f"{p}.ffn.w2", normal(cfg.ffn_dim, d), core)
        store.add(f"{p}.ffn.b2", np.zeros(d), core)
        store.add(f"{p}.ln2.g", np.ones(d), core)
        store.add(f"{p}.ln2.b", np.zeros(d), core)
        if v.has_language_adapters:
            tag = GroupTag(GroupKind.LANGUAGE_ADAPTER, cfg.source_language)
            for k, val in _adapter_params(d, cfg.adapter_dim, arng).items():
                store.add(f"{p}.lang.{k}", val, tag)
        if v.has_task_adapters:
            if cfg.arch_setting == ArchSetting.S1:
                stages = [("task.joint", GroupKind.ALIGNMENT_ADAPTER)]
            else:
                stages = [("task.text", GroupKind.TASK_ADAPTER_TEXT),
                          ("task.image", GroupKind.TASK_ADAPTER_IMAGE)]
                if cfg.arch_setting in (ArchSetting.S4, ArchSetting.S5):
                    stages.append(("align", GroupKind.ALIGNMENT_ADAPTER))
            for stage, kind in stages:
                for k, val in _adapter_params(d, cfg.adapter_dim, arng).items():
                    store.add(f"{p}.{stage}.{k}", val, GroupTag(kind))

    mlm = GroupTag(GroupKind.MLM_HEAD)
    store.add("mlm.dense.w", normal(d, d), mlm)
    store.add("mlm.dense.b", np.zeros(d), mlm)
    store.add("mlm.ln.g", np.ones(d), mlm)
    store.add("mlm.ln.b", np.zeros(d), mlm)
    head = GroupTag(GroupKind.PREDICTION_HEAD)
    store.add("head.w", normal(d, cfg.num_answers), head)
    store.add("head.b", np.zeros(cfg.num_answers), head)

    for lang in emb_langs[1:]:
        add_embedding(lang, prefix=f"bank.{lang}.")
    if v.has_language_adapters:
        for lang in cfg.languages:
            if lang == cfg.source_language:
                continue
            tag = GroupTag(GroupKind.LANGUAGE_ADAPTER, lang)
            for name, val in language_adapter_params(cfg, rng.integers(2**31)).items():
                store.add(f"bank.{lang}.{name}", val, tag)
    sort_banks(store)
    return store


# -- language slots -----------------------------------------------------------

def slot_names(store, kind):
    return [n for n, e in store.items() if e.group.kind == kind and not n.startswith("bank.")]


def active_language(store, kind):
    langs = {store.entries[n].group.language for n in slot_names(store, kind)}
    return langs.pop() if len(langs) == 1 else None


def _swap_kinds(variant):
    variant = Variant(variant)
    if variant == Variant.EMB_SWAP:
        return [GroupKind.TEXT_EMBEDDING]
    if variant == Variant.ADA_MONO:
        return [GroupKind.TEXT_EMBEDDING, GroupKind.LANGUAGE_ADAPTER]
    if variant == Variant.ADA_MULTI:
        return [GroupKind.LANGUAGE_ADAPTER]
    return []


def swap_language(store, variant, target, donor=None):
    """Replace the live language-specific parameters with ``target``'s.

    The displaced parameters move to ``bank.{old}.*``. ``donor`` is an
    optional second store (e.g. loaded from another checkpoint) consulted
    when ``target``'s groups are not already banked in ``store``.
    """
    kinds = _swap_kinds(variant)
    plan = []
    missing = []
    for kind in kinds:
        current = active_language(store, kind)
        if current == target:
            continue
        for name in slot_names(store, kind):
            src = f"bank.{target}.{name}"
            if src in store:
                plan.append((kind, name, current, store.entries[src]))
            elif donor is not None and name in donor and donor.entries[name].group == GroupTag(kind, target):
                plan.append((kind, name, current, donor.entries[name]))
            elif donor is not None and src in donor:
                plan.append((kind, name, current, donor.entries[src]))
            else:
                missing.append((kind, src))
    if missing:
        groups = sorted({k.value for k, _ in missing})
        raise SwapError(f"cannot swap to {target!r}; missing groups {groups}: {[n for _, n in missing]}")
    if not plan:
        return
    replaced = {}
    for kind, name, current, incoming in plan:
        live = store.entries[name]
        replaced[name] = dc.Entry(dc.Tensor(incoming.tensor.data.copy(), incoming.trainable, name),
                                  GroupTag(kind, target), incoming.trainable)
        replaced[f"bank.{current}.{name}"] = dc.Entry(
            dc.Tensor(live.tensor.data.copy(), live.trainable, f"bank.{current}.{name}"),
            live.group, live.trainable)
    drop = {f"bank.{target}.{name}" for _, name, _, _ in plan}
    # keep insertion order stable so save/load after a round trip is byte-identical
    entries = {}
    banked = {}
    for n, e in store.entries.items():
        if n in drop:
            continue
        if n.startswith("bank."):
            banked[n] = e
        else:
            entries[n] = replaced.get(n, e)
    for n, e in replaced.items():
        if n.startswith("bank."):
            banked[n] = e
    store.entries = {**entries, **banked}
    sort_banks(store)


def _bank_order(name):
    _, lang, rest = name.split(".", 2)
    return (lang, 0 if rest.startswith(("emb.", "mlm.")) else 1, rest)


def sort_banks(store):
    """Live entries keep their order; banked ones follow in a canonical order,
    so a store's layout depends only on its contents."""
    live = {n: e for n, e in store.entries.items() if not n.startswith("bank.")}
    banked = sorted(((n, e) for n, e in store.entries.items() if n.startswith("bank.")),
                    key=lambda kv: _bank_order(kv[0]))
    store.entries = {**live, **dict(banked)}


# -- forward pass -------------------------------------------------------------

class Model:
    """Stateless view of a :class:`ParameterStore` under a :class:`ModelConfig`."""

    def __init__(self, cfg, store):
        self.cfg = cfg
        self.store = store

    # parameters ---------------------------------------------------------
    def param(self, name, kind=None, language=None):
        if kind is None:
            return self.store[name]
        entry = self.store.entries.get(name)
        if entry is not None and entry.group.language == language:
            return entry.tensor
        banked = f"bank.{language}.{name}"
        if banked in self.store:
            return self.store[banked]
        raise SwapError(f"no {kind.value} parameters for language {language!r} (missing {banked})")

    def _embedding_language(self, language):
        if language not in self.cfg.languages:
            raise SwapError(f"language {language!r} not among configured languages {self.cfg.languages}")
        return language if self.cfg.variant.per_language_embedding else SHARED_LANGUAGE

    def token_embedding(self, language):
        lang = self._embedding_language(language)
        return self.param("emb.tok", GroupKind.TEXT_EMBEDDING, lang)

    def mlm_bias(self, language):
        lang = self._embedding_language(language)
        return self.param("mlm.bias", GroupKind.TEXT_EMBEDDING, lang)

    # embedding ----------------------------------------------------------
    def embed_inputs(self, batch, language):
        cfg = self.cfg
        if batch.n_text < 2:
            raise InputError("text segment needs at least [CLS] and [SEP]")
        if batch.n_text > cfg.max_text_len:
            raise InputError(f"{batch.n_text} text positions exceeds max_text_len={cfg.max_text_len}")
        if batch.n_regions > cfg.max_regions:
            raise InputError(f"{batch.n_regions} regions exceeds max_regions={cfg.max_regions}")
        seg = self.param("emb.seg")
        text = dc.embedding(self.token_embedding(language), batch.ids)
        text = text + self.param("emb.pos")[: batch.n_text] + seg[0]
        if batch.feats is None:
            return text
        img = (dc.matmul(batch.feats, self.param("img.feat.w")) + self.param("img.feat.b")
               + dc.matmul(batch.boxes, self.param("img.box.w")) + self.param("img.box.b") + seg[1])
        return dc.concat([text, img], axis=1)

    # blocks -------------------------------------------------------------
    def _linear(self, x, prefix):
        return dc.matmul(x, self.param(prefix + ".w")) + self.param(prefix + ".b")

    def _ln(self, x, prefix):
        return dc.layer_norm(x, self.param(prefix + ".g"), self.param(prefix + ".b"))

    def _adapter_with(self, x, get):
        h = dc.gelu(dc.matmul(x, get("down.w")) + get("down.b"))
        return x + (dc.matmul(h, get("up.w")) + get("up.b"))

    def adapter(self, x, prefix):
        return self._adapter_with(x, lambda k: self.param(f"{prefix}.{k}"))

    def language_adapter(self, x, layer, language):
        return self._adapter_with(
            x, lambda k: self.param(f"enc.{layer}.lang.{k}", GroupKind.LANGUAGE_ADAPTER, language))

    def attention(self, x, layer, key_bias, trace=None):
        cfg = self.cfg
        b, s, d = x.shape
        h, dh = cfg.heads, d // cfg.heads
        p = f"enc.{layer}.attn"

        def heads(t):
            return dc.transpose(dc.reshape(t, (b, s, h, dh)), (0, 2, 1, 3))

        q = heads(self._linear(x, p + ".q"))
        k = heads(self._linear(x, p + ".k"))
        v = heads(self._linear(x, p + ".v"))
        scores = dc.matmul(q, dc.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        att = dc.softmax(scores, axis=-1, bias=key_bias)
        if trace is not None:
            trace.setdefault("attention", []).append(att.data.copy())
        ctx = dc.reshape(dc.transpose(dc.matmul(att, v), (0, 2, 1, 3)), (b, s, d))
        return self._linear(ctx, p + ".o")

    def encoder_forward(self, x, batch, language, use_adapters=True, task=True, trace=None):
        """Run all layers.

        ``task=False`` skips the task/alignment stage (MLM training).
        ``use_adapters=False`` gives the adapter-free encoder. ``trace``
        collects per-layer stage outputs keyed ``(layer, stage)``.
        """
        cfg = self.cfg
        v, s = cfg.variant, cfg.arch_setting
        nt = batch.n_text
        key_bias = np.where(batch.key_mask(), 0.0, dc.tensor.MASK_BIAS)[:, None, None, :]
        x = self._ln(x, "emb.ln")
        split = x.shape[1] > nt
        for i in range(cfg.num_layers):
            p = f"enc.{i}"
            x = self._ln(x + self.attention(x, i, key_bias, trace), p + ".ln1")
            hdn = dc.gelu(dc.matmul(x, self.param(p + ".ffn.w1")) + self.param(p + ".ffn.b1"))
            ff = dc.matmul(hdn, self.param(p + ".ffn.w2")) + self.param(p + ".ffn.b2")
            x = self._ln(x + ff, p + ".ln2")
            if trace is not None:
                trace[(i, "ffn")] = x.data.copy()
            if not use_adapters:
                continue
            if v.has_language_adapters:
                if split and s in (ArchSetting.S2, ArchSetting.S4):
                    x = dc.concat([self.language_adapter(x[:, :nt], i, language), x[:, nt:]], axis=1)
                else:
                    x = self.language_adapter(x, i, language)
                if trace is not None:
                    trace[(i, "lang")] = x.data.copy()
            if not (task and v.has_task_adapters):
                continue
            if s == ArchSetting.S1:
                x = self.adapter(x, p + ".task.joint")
            elif split:
                x = dc.concat([self.adapter(x[:, :nt], p + ".task.text"),
                               self.adapter(x[:, nt:], p + ".task.image")], axis=1)
            else:
                x = self.adapter(x, p + ".task.text")
            if trace is not None:
                trace[(i, "task")] = x.data.copy()
            if s in (ArchSetting.S4, ArchSetting.S5):
                x = self.adapter(x, p + ".align")
                if trace is not None:
                    trace[(i, "align")] = x.data.copy()
        return x

    # heads ----------------------------------------------------------------
    def cls_answer_head(self, hidden):
        return dc.matmul(hidden[:, 0, :], self.param("head.w")) + self.param("head.b")

    def mlm_transform(self, hidden):
        h = dc.gelu(self._linear(hidden, "mlm.dense"))
        return self._ln(h, "mlm.ln")

    def mlm_head(self, hidden, positions, language, n_text=None, vocab_bias=None):
        """Vocabulary logits at ``positions`` = (batch index array, position array).

        The decoder is tied to the active language's token embedding.
        ``vocab_bias`` (a constant [V] array) is added to the logits, e.g. to
        restrict predictions to one language's tokens.
        """
        rows, cols = (np.asarray(a, dtype=np.int64) for a in positions)
        limit = n_text if n_text is not None else hidden.shape[1]
        if cols.size and (cols.max() >= limit or cols.min() < 0):
            raise ContractError(f"MLM positions must be text positions (< {limit})")
        picked = hidden[rows, cols]
        t = self.mlm_transform(picked)
        emb = self.token_embedding(language)
        logits = dc.matmul(t, dc.transpose(emb, (1, 0))) + self.mlm_bias(language)
        return logits if vocab_bias is None else logits + vocab_bias

    # convenience ------------------------------------------------------------
    def answer_logits(self, batch, language, trace=None):
        x = self.embed_inputs(batch, language)
        h = self.encoder_forward(x, batch, language, trace=trace)
        return self.cls_answer_head(h)

    def mlm_logits(self, batch, positions, language):
        x = self.embed_inputs(batch, language)
        h = self.encoder_forward(x, batch, language, task=False)
        return self.mlm_head(h, positions, language, n_text=batch.n_text)


def predict(logits):
    """Argmax with ties broken by the lowest class index."""
    data = getattr(logits, "data", logits)
    return np.argmax(data, axis=-1)

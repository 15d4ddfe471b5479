"""Subword vocabularies, tokenization, MLM corruption, and overlap-based
embedding initialization for new vocabularies."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import DimensionError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
CONT = "##"


def normalize(text):
    return " ".join(text.lower().split())


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:5]) != SPECIALS:
            raise ValueError("vocabulary must start with the five special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def word_pieces(self, word):
        """Greedy longest-match-first split; the whole word maps to [UNK] if
        any position cannot be matched."""
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end] if start == 0 else CONT + word[start:end]
                if piece in self.index:
                    found = piece
                    break
                end -= 1
            if found is None:
                return [UNK]
            pieces.append(self.index[found])
            start = end
        return pieces

    def encode(self, text):
        ids = []
        for word in normalize(text).split():
            ids.extend(self.word_pieces(word))
        return ids

    def decode(self, ids):
        words = []
        for i in ids:
            if i in (PAD, CLS, SEP, MASK):
                continue
            tok = self.tokens[i]
            if tok.startswith(CONT) and words:
                words[-1] += tok[len(CONT):]
            else:
                words.append(tok)
        return " ".join(words)

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def train_tokenizer(corpus, vocab_size):
    """Learn a subword vocabulary by frequency-driven pair merges.

    Words are split on whitespace after normalization. The base alphabet is
    every word-initial character plus every continuation character (``##c``),
    ordered by frequency. Merges repeatedly join the most frequent adjacent
    pair (ties broken by the lexicographically smallest pair) until the
    vocabulary is full or no pair remains.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot train a tokenizer on an empty corpus")
    if vocab_size <= len(SPECIALS):
        raise ValueError(f"vocab_size must exceed {len(SPECIALS)}")
    words = Counter(w for line in corpus for w in normalize(line).split())
    if not words:
        raise ValueError("corpus contains no words")

    splits = {w: [w[0]] + [CONT + c for c in w[1:]] for w in words}
    base = Counter()
    for w, n in words.items():
        for s in splits[w]:
            base[s] += n
    alphabet = sorted(base, key=lambda s: (-base[s], s))
    tokens = list(SPECIALS) + alphabet[: vocab_size - len(SPECIALS)]
    known = set(tokens)

    while len(tokens) < vocab_size:
        pairs = Counter()
        for w, n in words.items():
            sp = splits[w]
            for a, b in zip(sp, sp[1:]):
                pairs[(a, b)] += n
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        merged = best[0] + best[1][len(CONT):]
        for w, sp in splits.items():
            if len(sp) < 2:
                continue
            out, i = [], 0
            while i < len(sp):
                if i + 1 < len(sp) and sp[i] == best[0] and sp[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(sp[i])
                    i += 1
            splits[w] = out
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return Vocab(tokens)


def tokenize(vocab, text, max_len):
    """``[CLS] pieces [SEP]`` truncated to ``max_len`` then padded with [PAD]."""
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    body = vocab.encode(text)[: max_len - 2]
    ids = [CLS] + body + [SEP]
    return ids + [PAD] * (max_len - len(ids))


@dataclass
class MlmBatch:
    input_ids: np.ndarray
    positions: np.ndarray
    targets: np.ndarray


def mlm_mask(ids, mask_prob=0.15, seed=0, vocab_size=None, rng=None):
    """BERT-style corruption of non-special positions.

    Each non-special position is selected with probability ``mask_prob``;
    selected positions become [MASK] 80% of the time, a random non-special id
    10% of the time, and stay unchanged otherwise. Works on a 1-D sequence or
    a 2-D batch; ``positions`` holds flat indices into ``ids``.
    """
    if not 0.0 < mask_prob < 1.0:
        raise ValueError("mask_prob must lie in (0, 1)")
    ids = np.asarray(ids, dtype=np.int64)
    rng = rng if rng is not None else np.random.default_rng(seed)
    flat = ids.reshape(-1)
    eligible = flat >= len(SPECIALS)
    chosen = eligible & (rng.random(flat.shape) < mask_prob)
    out = flat.copy()
    pos = np.flatnonzero(chosen)
    roll = rng.random(pos.shape)
    out[pos[roll < 0.8]] = MASK
    rand_pos = pos[(roll >= 0.8) & (roll < 0.9)]
    hi = vocab_size if vocab_size is not None else int(flat.max()) + 1
    if rand_pos.size and hi > len(SPECIALS):
        out[rand_pos] = rng.integers(len(SPECIALS), hi, size=rand_pos.shape)
    return MlmBatch(out.reshape(ids.shape), pos, flat[pos].copy())


def init_embeddings_with_overlap(src_vocab, src_emb, tgt_vocab, seed, dim=None, std=0.02):
    """New embedding matrix for ``tgt_vocab``.

    Rows of tokens whose string also occurs in ``src_vocab`` (always including
    the specials) are copied; the rest are drawn from N(0, std^2).
    """
    src = np.asarray(getattr(src_emb, "data", src_emb), dtype=np.float64)
    if src.shape[0] != len(src_vocab):
        raise DimensionError(f"source embedding has {src.shape[0]} rows for {len(src_vocab)} tokens")
    if dim is not None and src.shape[1] != dim:
        raise DimensionError(f"embedding width {src.shape[1]} != model width {dim}")
    rng = np.random.default_rng(seed)
    out = rng.normal(0.0, std, size=(len(tgt_vocab), src.shape[1]))
    for i, tok in enumerate(tgt_vocab.tokens):
        j = src_vocab.index.get(tok)
        if j is not None:
            out[i] = src[j]
    return out


def overlap_tokens(src_vocab, tgt_vocab):
    return [t for t in tgt_vocab.tokens if t in src_vocab.index]

"""A model checkpoint: config, parameter store, tokenizers, answer classes."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data.schema import AnswerVocab
from .diffcore import load_store, save_store
from .model import SHARED_LANGUAGE, Model, ModelConfig
from .textproc import Vocab


@dataclass
class Checkpoint:
    cfg: ModelConfig
    store: object
    vocabs: dict = field(default_factory=dict)  # language (or "multi") -> Vocab
    answers: AnswerVocab | None = None

    @property
    def model(self):
        return Model(self.cfg, self.store)

    def vocab(self, language):
        if language in self.vocabs:
            return self.vocabs[language]
        if SHARED_LANGUAGE in self.vocabs:
            return self.vocabs[SHARED_LANGUAGE]
        raise KeyError(f"no tokenizer for language {language!r}")

    def clone(self):
        return Checkpoint(ModelConfig.from_dict(self.cfg.to_dict()), self.store.clone(), dict(self.vocabs), self.answers)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for lang, v in sorted(self.vocabs.items()):
            v.save(d / f"vocab.{lang}.txt")
        if self.answers is not None:
            self.answers.save(d / "answers.txt")
        save_store(self.store, d, config=self.cfg.to_dict(),
                   extra={"vocabs": sorted(self.vocabs), "has_answers": self.answers is not None})

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        store, manifest = load_store(d)
        cfg = ModelConfig.from_dict(manifest["config"])
        vocabs = {lang: Vocab.load(d / f"vocab.{lang}.txt") for lang in manifest.get("vocabs", [])}
        answers = AnswerVocab.load(d / "answers.txt") if manifest.get("has_answers") else None
        return cls(cfg, store, vocabs, answers)

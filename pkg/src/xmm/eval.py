"""Accuracy aggregation and report emission."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.schema import STRUCTURAL_TYPES, StructuralType

CSV_COLUMNS = ("variant", "language", "split_size", "structural_type", "count", "accuracy")
CURVE_SIZES = (0, 1, 5, 10, 20, 25, 48)


def accuracy(preds, golds):
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold labels")
    if not preds:
        raise ValueError("accuracy of an empty set is undefined")
    return sum(int(p == g) for p, g in zip(preds, golds)) / len(preds)


@dataclass(frozen=True)
class ResultRow:
    question_id: str
    predicted: int
    gold: int
    structural_type: StructuralType
    language: str

    @property
    def correct(self):
        # unseen gold answers (OUT_OF_VOCAB, -1) never match a class index
        return self.gold >= 0 and self.predicted == self.gold


def accuracy_by_type(rows):
    groups = defaultdict(list)
    for r in rows:
        groups[StructuralType(r.structural_type)].append(r.correct)
    return {t: sum(v) / len(v) for t in STRUCTURAL_TYPES if (v := groups.get(t))}


def accuracy_by_language(rows):
    groups = defaultdict(list)
    for r in rows:
        groups[r.language].append(r.correct)
    return {k: sum(v) / len(v) for k, v in sorted(groups.items())}


def non_source_mean(per_language, source="en"):
    others = [v for k, v in per_language.items() if k != source]
    if not others:
        raise ValueError("non-source mean needs at least one non-source language")
    return float(sum(others) / len(others))


@dataclass
class EvalResult:
    rows: list = field(default_factory=list)

    @property
    def overall(self):
        return sum(r.correct for r in self.rows) / len(self.rows)

    @property
    def per_type(self):
        return accuracy_by_type(self.rows)

    @property
    def per_language(self):
        return accuracy_by_language(self.rows)

    def counts(self):
        return len(self.rows), sum(r.correct for r in self.rows)


def make_result(records, predicted, gold):
    return EvalResult([ResultRow(r.question_id, int(p), int(g), r.structural_type, r.language)
                       for r, p, g in zip(records, predicted, gold)])


@dataclass
class ReportCell:
    variant: str
    language: str
    split_size: int
    result: EvalResult


def majority_baseline(train_labels, test_labels):
    values, counts = np.unique(np.asarray(train_labels), return_counts=True)
    top = values[np.argmax(counts)]
    return float(np.mean(np.asarray(test_labels) == top))


def report_rows(cells):
    """Flat rows in :data:`CSV_COLUMNS` order; one ``ALL`` row plus one row per
    structural type present for every cell."""
    out = []
    for c in cells:
        n, _ = c.result.counts()
        out.append([c.variant, c.language, c.split_size, "ALL", n, c.result.overall])
        by_type = c.result.per_type
        for t in STRUCTURAL_TYPES:
            if t in by_type:
                m = sum(1 for r in c.result.rows if r.structural_type == t)
                out.append([c.variant, c.language, c.split_size, t.value, m, by_type[t]])
    return out


def table2(cells, source="en"):
    """variant -> language -> zero-shot accuracy, plus the non-source mean."""
    out = defaultdict(dict)
    for c in cells:
        if c.split_size == 0:
            out[c.variant][c.language] = c.result.overall
    for variant, langs in out.items():
        if any(l != source for l in langs):
            langs["mean"] = non_source_mean({k: v for k, v in langs.items() if k != "mean"}, source)
    return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}


def few_shot_curves(cells):
    """language -> variant -> {split_size: accuracy} (0 = zero-shot)."""
    out = defaultdict(lambda: defaultdict(dict))
    for c in cells:
        out[c.language][c.variant][c.split_size] = c.result.overall
    return {l: {v: dict(sorted(s.items())) for v, s in sorted(vs.items())} for l, vs in sorted(out.items())}


def emit_report(cells, fmt, out_path, source="en"):
    """Write ``cells`` as CSV (one row per cell and structural type) or JSON
    (the CSV rows plus Table-2 and few-shot-curve shaped views)."""
    cells = list(cells)
    if not cells:
        raise ValueError("nothing to report")
    path = Path(out_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with open(path, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for row in report_rows(cells):
                    w.writerow(row[:5] + [repr(float(row[5]))])
        elif fmt == "json":
            doc = {
                "rows": [dict(zip(CSV_COLUMNS, r)) for r in report_rows(cells)],
                "table2": table2(cells, source),
                "few_shot_curves": {l: {v: {str(k): a for k, a in s.items()} for v, s in vs.items()}
                                    for l, vs in few_shot_curves(cells).items()},
            }
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def read_csv_report(path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["split_size"] = int(r["split_size"])
        r["count"] = int(r["count"])
        r["accuracy"] = float(r["accuracy"])
    return rows


def format_pct(x):
    return f"{100 * x:.2f}"

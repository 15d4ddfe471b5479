"""Image-level test/dev/few-shot splits that preserve the structural-type mix."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schema import STRUCTURAL_TYPES

FEW_SHOT_SIZES = (1, 5, 10, 20, 25, 48)
# full-scale image and question counts per split
REFERENCE_SPLIT_IMAGES = {"TEST": 300, "DEV": 50, **{f"TRAIN_{k}": k for k in FEW_SHOT_SIZES}}
REFERENCE_SPLIT_QUESTIONS = {"TEST": 9666, "DEV": 1422, "TRAIN_1": 27, "TRAIN_5": 155, "TRAIN_10": 317,
                         "TRAIN_20": 594, "TRAIN_25": 704, "TRAIN_48": 1490}


class SplitError(ValueError):
    pass


def train_split(k):
    return f"TRAIN_{k}"


@dataclass
class SplitPlan:
    splits: dict = field(default_factory=dict)  # name -> sorted list of image ids
    seed: int = 0

    def images(self, name):
        return self.splits[name]

    def records(self, name, records):
        keep = set(self.splits[name])
        return [r for r in records if r.image_id in keep]

    def sizes(self):
        return sorted(int(n.split("_")[1]) for n in self.splits if n.startswith("TRAIN_"))

    def to_json(self):
        return {"seed": self.seed, "splits": {k: sorted(v) for k, v in sorted(self.splits.items())}}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        plan = cls({k: sorted(v) for k, v in d["splits"].items()}, int(d.get("seed", 0)))
        plan.check_integrity()
        return plan

    def check_integrity(self):
        names = [n for n in ("TEST", "DEV") if n in self.splits]
        trains = self.sizes()
        if trains:
            names.append(train_split(trains[-1]))
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                both = set(self.splits[a]) & set(self.splits[b])
                if both:
                    raise SplitError(f"{a} and {b} share images: {sorted(both)[:5]}")
        for small, big in zip(trains, trains[1:]):
            if not set(self.splits[train_split(small)]) <= set(self.splits[train_split(big)]):
                raise SplitError(f"TRAIN_{small} is not nested in TRAIN_{big}")


def type_distribution(records):
    counts = Counter(r.structural_type for r in records)
    n = sum(counts.values())
    return np.array([counts[t] / n if n else 0.0 for t in STRUCTURAL_TYPES])


def l1_distance(p, q):
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def make_few_shot_splits(records, region_index=None, sizes=FEW_SHOT_SIZES, seed=0,
                         n_test=40, n_dev=20, tolerance=0.05):
    """Greedy stratified image split.

    Images are visited in a seeded random order. Each split grows one image at
    a time, taking the candidate whose addition keeps the split's type
    histogram closest (L1) to the global one; the first candidate in visiting
    order wins ties. Train splits are grown as one nested chain, so
    ``TRAIN_k`` is the first ``k`` images added. ``region_index`` (when given)
    restricts candidates to images with region features.
    """
    by_image = defaultdict(lambda: np.zeros(len(STRUCTURAL_TYPES)))
    col = {t: i for i, t in enumerate(STRUCTURAL_TYPES)}
    for r in records:
        by_image[r.image_id][col[r.structural_type]] += 1
    images = sorted(by_image)
    if region_index is not None:
        images = [i for i in images if i in region_index]
    sizes = sorted(set(sizes))
    need = n_test + n_dev + (sizes[-1] if sizes else 0)
    if need > len(images):
        raise SplitError(f"need {need} images (test {n_test} + dev {n_dev} + train {sizes[-1] if sizes else 0}), "
                         f"have {len(images)}")
    total = np.sum([by_image[i] for i in images], axis=0)
    target = total / total.sum()
    rng = np.random.default_rng(seed)
    pool = [images[i] for i in rng.permutation(len(images))]

    def grow(count, checkpoints=()):
        chosen, acc = [], np.zeros_like(target)
        marks = {}
        for step in range(1, count + 1):
            best, best_d = None, None
            for j, img in enumerate(pool):
                cand = acc + by_image[img]
                d = l1_distance(cand / cand.sum(), target)
                if best_d is None or d < best_d - 1e-12:
                    best, best_d = j, d
            img = pool.pop(best)
            chosen.append(img)
            acc = acc + by_image[img]
            if step in checkpoints:
                marks[step] = list(chosen)
        return chosen, marks

    splits = {}
    splits["TEST"], _ = grow(n_test)
    splits["DEV"], _ = grow(n_dev)
    if sizes:
        _, marks = grow(sizes[-1], set(sizes))
        for k in sizes:
            splits[train_split(k)] = marks[k]
    plan = SplitPlan({k: sorted(v) for k, v in splits.items()}, seed)
    plan.check_integrity()
    if tolerance is not None:
        for name, ids in plan.splits.items():
            keep = set(ids)
            d = l1_distance(type_distribution([r for r in records if r.image_id in keep]), target)
            if d > tolerance:
                raise SplitError(f"{name}: structural-type L1 distance {d:.3f} exceeds {tolerance}")
    return plan


def split_question_counts(plan, records):
    return {name: len(plan.records(name, records)) for name in plan.splits}

"""Record types and file formats for GQA/xGQA-style question data."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

REGION_MAGIC = b"XMMREGNS"
RECORD_FIELDS = ("question_id", "image_id", "text", "language", "answer", "structural_type")
OUT_OF_VOCAB = -1


class ParseError(ValueError):
    pass


class StructuralType(str, enum.Enum):
    VERIFY = "VERIFY"
    QUERY = "QUERY"
    CHOOSE = "CHOOSE"
    LOGICAL = "LOGICAL"
    COMPARE = "COMPARE"


STRUCTURAL_TYPES = tuple(StructuralType)


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    image_id: str
    text: str
    language: str
    answer: str
    structural_type: StructuralType

    def __post_init__(self):
        object.__setattr__(self, "structural_type", StructuralType(self.structural_type))
        if not self.answer:
            raise ValueError(f"{self.question_id}: empty answer")

    def to_json(self):
        d = asdict(self)
        d["structural_type"] = self.structural_type.value
        return d


@dataclass
class RegionSet:
    image_id: str
    features: np.ndarray  # [N, f]
    boxes: np.ndarray     # [N, 6] = x1, y1, x2, y2, w, h in [0, 1]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        if self.features.shape[0] != self.boxes.shape[0] or self.features.shape[0] < 1:
            raise ValueError(f"{self.image_id}: need >=1 region with matching boxes")
        b = self.boxes
        if b.shape[1] != 6 or (b < 0).any() or (b > 1).any() or (b[:, 0] > b[:, 2]).any() or (b[:, 1] > b[:, 3]).any():
            raise ValueError(f"{self.image_id}: malformed boxes")

    def __len__(self):
        return self.features.shape[0]


# -- question files -------------------------------------------------------------

def _record_from_row(row, where, language=None):
    for f in RECORD_FIELDS:
        if f not in row:
            raise ParseError(f"{where}: missing field {f!r}")
    extra = set(row) - set(RECORD_FIELDS)
    if extra:
        raise ParseError(f"{where}: unexpected fields {sorted(extra)}")
    st = str(row["structural_type"]).upper()
    if st not in StructuralType.__members__:
        raise ParseError(f"{where}: unknown structural type {row['structural_type']!r}")
    if language is not None and row["language"] != language:
        raise ParseError(f"{where}: language {row['language']!r} != requested {language!r}")
    if not row["answer"]:
        raise ParseError(f"{where}: empty 'answer'")
    return QuestionRecord(str(row["question_id"]), str(row["image_id"]), " ".join(str(row["text"]).split()),
                          str(row["language"]), str(row["answer"]), StructuralType(st))


def load_xgqa(path, language=None):
    """Load question records.

    ``.jsonl`` files use this package's row schema. ``.json`` files are read
    as GQA-style release files (``{qid: {imageId, question, answer, types:
    {structural}}}``) and tagged with ``language``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return _load_gqa_json(text, path, language)
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{where}: invalid JSON ({exc.msg})") from None
        if not isinstance(row, dict):
            raise ParseError(f"{where}: expected an object")
        out.append(_record_from_row(row, where, language))
    return out


def _load_gqa_json(text, path, language):
    if language is None:
        raise ParseError(f"{path}: GQA-style files need an explicit language")
    data = json.loads(text) if text.strip() else {}
    out = []
    for qid, q in data.items():
        where = f"{path}:{qid}"
        for f in ("imageId", "question", "answer", "types"):
            if f not in q:
                raise ParseError(f"{where}: missing field {f!r}")
        row = {"question_id": qid, "image_id": q["imageId"], "text": q["question"], "language": language,
               "answer": q["answer"], "structural_type": q["types"].get("structural", "")}
        out.append(_record_from_row(row, where))
    return out


def save_questions(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


# -- region files ---------------------------------------------------------------

def save_regions(regions, path):
    with open(path, "wb") as f:
        f.write(REGION_MAGIC)
        f.write(struct.pack("<I", len(regions)))
        for r in regions:
            bid = r.image_id.encode("utf-8")
            f.write(struct.pack("<I", len(bid)))
            f.write(bid)
            n, dim = r.features.shape
            f.write(struct.pack("<II", n, dim))
            f.write(np.concatenate([r.features, r.boxes], axis=1).astype("<f4").tobytes())


def load_regions(path):
    raw = Path(path).read_bytes()
    if raw[:8] != REGION_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:8]!r}")
    (count,) = struct.unpack_from("<I", raw, 8)
    off = 12
    out = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", raw, off)
        off += 4
        image_id = raw[off:off + ln].decode("utf-8")
        off += ln
        n, dim = struct.unpack_from("<II", raw, off)
        off += 8
        arr = np.frombuffer(raw, dtype="<f4", count=n * (dim + 6), offset=off).reshape(n, dim + 6)
        off += 4 * n * (dim + 6)
        out[image_id] = RegionSet(image_id, arr[:, :dim].astype(np.float64), np.clip(arr[:, dim:].astype(np.float64), 0, 1))
    if off != len(raw):
        raise ParseError(f"{path}: {len(raw) - off} trailing bytes")
    return out


# -- answers --------------------------------------------------------------------

class AnswerVocab:
    """Sorted unique training answers mapped to contiguous class ids."""

    def __init__(self, answers):
        self.answers = sorted(set(answers))
        self.index = {a: i for i, a in enumerate(self.answers)}

    def __len__(self):
        return len(self.answers)

    def lookup(self, answer):
        return self.index.get(answer, OUT_OF_VOCAB)

    def encode(self, records):
        return np.array([self.lookup(r.answer) for r in records], dtype=np.int64)

    def save(self, path):
        Path(path).write_text("\n".join(self.answers) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls([a for a in Path(path).read_text(encoding="utf-8").split("\n") if a])


def build_answer_vocab(train_records):
    records = list(train_records)
    if not records:
        raise ValueError("cannot build an answer vocabulary from no records")
    return AnswerVocab(r.answer for r in records)

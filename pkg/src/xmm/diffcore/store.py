"""Named, group-tagged parameters and the on-disk checkpoint format."""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import DTYPE, Tensor

TENSOR_MAGIC = b"XMMTENSR"


class GroupKind(str, enum.Enum):
    CORE_TRANSFORMER = "CORE_TRANSFORMER"
    TEXT_EMBEDDING = "TEXT_EMBEDDING"
    LANGUAGE_ADAPTER = "LANGUAGE_ADAPTER"
    TASK_ADAPTER_TEXT = "TASK_ADAPTER_TEXT"
    TASK_ADAPTER_IMAGE = "TASK_ADAPTER_IMAGE"
    ALIGNMENT_ADAPTER = "ALIGNMENT_ADAPTER"
    IMAGE_PROJECTION = "IMAGE_PROJECTION"
    PREDICTION_HEAD = "PREDICTION_HEAD"
    MLM_HEAD = "MLM_HEAD"


LANGUAGE_KINDS = frozenset({GroupKind.TEXT_EMBEDDING, GroupKind.LANGUAGE_ADAPTER})


@dataclass(frozen=True)
class GroupTag:
    kind: GroupKind
    language: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GroupKind(self.kind))
        if (self.language is not None) != (self.kind in LANGUAGE_KINDS):
            raise ValueError(f"language must be set iff kind is TEXT_EMBEDDING/LANGUAGE_ADAPTER: {self}")

    def __str__(self):
        return self.kind.value if self.language is None else f"{self.kind.value}({self.language})"


@dataclass
class Entry:
    tensor: Tensor
    group: GroupTag
    trainable: bool


class ParameterStore:
    """Ordered mapping ``name -> Entry``.

    ``trainable`` is mirrored onto ``tensor.requires_grad`` so frozen
    parameters never enter the backward graph.
    """

    def __init__(self):
        self.entries: dict[str, Entry] = {}

    def add(self, name, value, group, trainable=True):
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=trainable, name=name)
        self.entries[name] = Entry(t, group, bool(trainable))
        return t

    def __contains__(self, name):
        return name in self.entries

    def __getitem__(self, name) -> Tensor:
        return self.entries[name].tensor

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def names(self, pred=None):
        return [n for n, e in self.entries.items() if pred is None or pred(e.group)]

    def trainable_names(self):
        return sorted(n for n, e in self.entries.items() if e.trainable)

    def languages(self, kind):
        return sorted({e.group.language for e in self.entries.values() if e.group.kind == kind})

    def remove(self, name):
        del self.entries[name]

    def set_value(self, name, value):
        e = self.entries[name]
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != e.tensor.shape:
            raise ValueError(f"{name}: shape {value.shape} != {e.tensor.shape}")
        e.tensor.data = value.copy()

    def clone(self):
        out = ParameterStore()
        for n, e in self.entries.items():
            out.add(n, e.tensor.data.copy(), e.group, e.trainable)
        return out

    def snapshot(self, pred=None):
        """Raw bytes per name, for bit-exact comparisons."""
        return {n: e.tensor.data.tobytes() for n, e in self.entries.items()
                if pred is None or pred(e.group)}

    def digest(self, pred=None):
        h = hashlib.sha256()
        for n in sorted(self.entries):
            e = self.entries[n]
            if pred is None or pred(e.group):
                h.update(n.encode())
                h.update(e.tensor.data.tobytes())
        return h.hexdigest()

    def zero_grad(self):
        for e in self.entries.values():
            e.tensor.grad = None


def set_trainable(store, selector, flag):
    """Set ``trainable`` on every entry whose group matches ``selector``."""
    count = 0
    for e in store.entries.values():
        if selector(e.group):
            e.trainable = bool(flag)
            e.tensor.requires_grad = bool(flag)
            if not flag:
                e.tensor.grad = None
            count += 1
    return count


def freeze_all(store):
    return set_trainable(store, lambda g: True, False)


# -- checkpoint files ---------------------------------------------------------

def write_tensor_file(path, array):
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.tobytes())


def read_tensor_file(path):
    raw = Path(path).read_bytes()
    if raw[:8] != TENSOR_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    (rank,) = struct.unpack_from("<I", raw, 8)
    dims = struct.unpack_from(f"<{rank}Q", raw, 12)
    off = 12 + 8 * rank
    n = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    if off + 8 * n != len(raw):
        raise ValueError(f"{path}: size mismatch for shape {dims}")
    return data.reshape(dims).astype(DTYPE)


def _file_name(name):
    return name.replace("/", "_") + ".bin"


def save_store(store, directory, config=None, extra=None):
    """Write ``manifest.json`` plus one binary file per parameter."""
    d = Path(directory)
    (d / "params").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, e in store.items():
        fname = _file_name(name)
        write_tensor_file(d / "params" / fname, e.tensor.data)
        entries.append({
            "name": name,
            "shape": list(e.tensor.shape),
            "kind": e.group.kind.value,
            "language": e.group.language,
            "trainable": e.trainable,
            "file": f"params/{fname}",
        })
    manifest = {"config": config, "entries": entries}
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_store(directory):
    """Inverse of :func:`save_store`; returns ``(store, manifest)``."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    store = ParameterStore()
    for ent in manifest["entries"]:
        arr = read_tensor_file(d / ent["file"])
        if list(arr.shape) != list(ent["shape"]):
            raise ValueError(f"{ent['name']}: file shape {arr.shape} != manifest {ent['shape']}")
        store.add(ent["name"], arr, GroupTag(ent["kind"], ent["language"]), ent["trainable"])
    return store, manifest

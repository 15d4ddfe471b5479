"""Synthetic multilingual VQA: grid scenes, templated questions of the five
structural types, descriptive MLM corpora, and cipher pseudo-languages.

Attribute priors are deliberately non-uniform (skewed colour frequencies,
shape-colour and shape-size affinities, placement preferences per shape) so
that every content word has a distinct distributional profile; without that,
exchangeable words could not be aligned across languages from text alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schema import QuestionRecord, RegionSet, StructuralType

SOURCE_LANGUAGE = "en"
NOISE_SIGMA = 0.05


@dataclass(frozen=True)
class Inventory:
    colors: tuple = ("red", "blue", "green", "yellow", "purple", "gray")
    shapes: tuple = ("circle", "square", "triangle", "star")
    sizes: tuple = ("small", "large")
    color_weights: tuple = (0.30, 0.22, 0.16, 0.13, 0.10, 0.09)
    shape_weights: tuple = (0.35, 0.28, 0.22, 0.15)
    # colour boosts per shape as (colour index, extra weight) pairs, P(large)
    # per shape, P(top half) per shape and a per-shape lean towards the left
    shape_color: tuple = (((0, 1.0), (5, 0.3)), ((1, 1.0), (4, 0.3)), ((2, 1.0), (4, 0.15)),
                          ((3, 1.0), (5, 0.1)))
    shape_large: tuple = (0.5, 0.8, 0.35, 0.15)
    shape_top: tuple = (0.5, 0.25, 0.75, 0.85)
    shape_left: tuple = (0.5, 0.85, 0.15, 0.6)
    min_objects: int = 3
    max_objects: int = 6

    @property
    def feature_dim(self):
        return len(self.shapes) + len(self.colors) + len(self.sizes)


DEFAULT_INVENTORY = Inventory()


@dataclass(frozen=True)
class SceneObject:
    color: str
    shape: str
    size: str
    row: int
    col: int


@dataclass
class SceneGraph:
    image_id: str
    grid_size: int
    objects: list = field(default_factory=list)

    def find(self, color=None, shape=None):
        return [o for o in self.objects
                if (color is None or o.color == color) and (shape is None or o.shape == shape)]

    def relations(self):
        """(a, relation, b) triples derived from grid positions."""
        out = []
        for a in self.objects:
            for b in self.objects:
                if a is b:
                    continue
                if a.col < b.col:
                    out.append((a, "left", b))
                if a.col > b.col:
                    out.append((a, "right", b))
                if a.row < b.row:
                    out.append((a, "above", b))
                if a.row > b.row:
                    out.append((a, "below", b))
        return out


class GenerationError(RuntimeError):
    pass


def encode_attributes(obj, inv=DEFAULT_INVENTORY):
    v = np.zeros(inv.feature_dim)
    v[inv.shapes.index(obj.shape)] = 1.0
    v[len(inv.shapes) + inv.colors.index(obj.color)] = 1.0
    v[len(inv.shapes) + len(inv.colors) + inv.sizes.index(obj.size)] = 1.0
    return v


def _sample_objects(rng, n, inv):
    cw = np.asarray(inv.color_weights)
    objs = []
    used = set()
    for _ in range(200 * n):
        if len(objs) == n:
            break
        si = int(rng.choice(len(inv.shapes), p=inv.shape_weights))
        w = cw.copy()
        for c, extra in inv.shape_color[si]:
            w[c % len(w)] += extra
        ci = int(rng.choice(len(inv.colors), p=w / w.sum()))
        key = (ci, si)
        if key in used:
            continue
        used.add(key)
        size = inv.sizes[1] if rng.random() < inv.shape_large[si] else inv.sizes[0]
        objs.append((inv.colors[ci], inv.shapes[si], size, rng.random() < inv.shape_top[si], inv.shape_left[si]))
    if len(objs) < n:
        raise GenerationError(f"could not place {n} distinct colour/shape pairs")
    return objs


def generate_scene(seed, grid_size=3, inventory=DEFAULT_INVENTORY, image_id=None):
    """Random scene plus its region features.

    Each object occupies one grid cell; its region feature is the one-hot
    attribute code plus N(0, 0.05^2) noise, stored at float32 precision so
    in-memory and on-disk features agree.
    """
    inv = inventory
    if not inv.colors or not inv.shapes or not inv.sizes:
        raise GenerationError("inventory must list colours, shapes and sizes")
    cells = grid_size * grid_size
    if inv.max_objects > cells or inv.min_objects > inv.max_objects or inv.min_objects < 1:
        raise GenerationError(f"{grid_size}x{grid_size} grid cannot hold {inv.min_objects}-{inv.max_objects} objects")
    if inv.max_objects > len(inv.colors) * len(inv.shapes):
        raise GenerationError("inventory has too few colour/shape pairs for max_objects")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(inv.min_objects, inv.max_objects + 1))
    specs = _sample_objects(rng, n, inv)
    top_rows = max(grid_size // 2, 1)
    free = set(range(cells))
    objects = []
    for color, shape, size, wants_top, lean in specs:
        pool = sorted(c for c in free if (c // grid_size < top_rows) == wants_top) or sorted(free)
        cols = np.array([c % grid_size for c in pool])
        w = lean ** (grid_size - 1 - cols) * (1 - lean) ** cols
        cell = int(rng.choice(pool, p=w / w.sum()))
        free.discard(cell)
        objects.append(SceneObject(color, shape, size, cell // grid_size, cell % grid_size))
    image_id = image_id if image_id is not None else f"img{seed}"
    scene = SceneGraph(image_id, grid_size, objects)
    feats = np.stack([encode_attributes(o, inv) for o in objects])
    feats = (feats + rng.normal(0.0, NOISE_SIGMA, feats.shape)).astype(np.float32).astype(np.float64)
    boxes = np.array([[o.col / grid_size, o.row / grid_size, (o.col + 1) / grid_size, (o.row + 1) / grid_size,
                       1 / grid_size, 1 / grid_size] for o in objects])
    return scene, RegionSet(image_id, feats, boxes)


# -- questions ----------------------------------------------------------------

def _ref(o):
    return f"the {o.color} {o.shape}"


def _absent_pair(rng, scene, inv):
    present = {(o.color, o.shape) for o in scene.objects}
    options = [(c, s) for c in inv.colors for s in inv.shapes if (c, s) not in present]
    return options[int(rng.integers(len(options)))]


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _other(rng, seq, value):
    return _pick(rng, [x for x in seq if x != value])


def _verify(rng, scene, inv):
    if rng.random() < 0.5:
        if rng.random() < 0.5:
            o = _pick(rng, scene.objects)
            return f"is there a {o.color} {o.shape} ?", "yes"
        c, s = _absent_pair(rng, scene, inv)
        return f"is there a {c} {s} ?", "no"
    o = _pick(rng, scene.objects)
    size = o.size if rng.random() < 0.5 else _other(rng, inv.sizes, o.size)
    return f"is {_ref(o)} {size} ?", "yes" if size == o.size else "no"


def _query(rng, scene, inv):
    forms = ["size", "count"]
    uniq_shape = [o for o in scene.objects if len(scene.find(shape=o.shape)) == 1]
    uniq_color = [o for o in scene.objects if len(scene.find(color=o.color)) == 1]
    if uniq_shape:
        forms.append("color")
    if uniq_color:
        forms.append("shape")
    form = _pick(rng, forms)
    if form == "color":
        o = _pick(rng, uniq_shape)
        return f"what color is the {o.shape} ?", o.color
    if form == "shape":
        o = _pick(rng, uniq_color)
        return f"what shape is the {o.color} object ?", o.shape
    if form == "size":
        o = _pick(rng, scene.objects)
        return f"what size is {_ref(o)} ?", o.size
    c = _pick(rng, inv.colors) if rng.random() < 0.3 else _pick(rng, scene.objects).color
    return f"how many {c} objects are there ?", str(len(scene.find(color=c)))


def _choose(rng, scene, inv):
    forms = ["size"]
    uniq_shape = [o for o in scene.objects if len(scene.find(shape=o.shape)) == 1]
    uniq_color = [o for o in scene.objects if len(scene.find(color=o.color)) == 1]
    pairs = [(a, b) for a in scene.objects for b in scene.objects if a is not b and a.col != b.col]
    if uniq_shape:
        forms.append("color")
    if uniq_color:
        forms.append("shape")
    if pairs:
        forms.append("side")
    form = _pick(rng, forms)
    swap = rng.random() < 0.5
    if form == "color":
        o = _pick(rng, uniq_shape)
        a, b = o.color, _other(rng, inv.colors, o.color)
        a, b = (b, a) if swap else (a, b)
        return f"is the {o.shape} {a} or {b} ?", o.color
    if form == "shape":
        o = _pick(rng, uniq_color)
        a, b = o.shape, _other(rng, inv.shapes, o.shape)
        a, b = (b, a) if swap else (a, b)
        return f"is the {o.color} object a {a} or a {b} ?", o.shape
    if form == "side":
        a, b = _pick(rng, pairs)
        ans = "left" if a.col < b.col else "right"
        opts = ("right", "left") if swap else ("left", "right")
        return f"is {_ref(a)} {opts[0]} or {opts[1]} of {_ref(b)} ?", ans
    o = _pick(rng, scene.objects)
    opts = tuple(reversed(inv.sizes)) if swap else tuple(inv.sizes)
    return f"is {_ref(o)} {opts[0]} or {opts[1]} ?", o.size


def _logical(rng, scene, inv):
    present = [(o.color, o.shape) for o in scene.objects]
    absent = [(c, s) for c in inv.colors for s in inv.shapes if (c, s) not in set(present)]
    op = "and" if rng.random() < 0.5 else "or"
    if op == "and":
        first = rng.random() < 0.7
        second = rng.random() < (0.7 if first else 0.5)
    else:
        first = rng.random() < 0.3
        second = rng.random() < (0.3 if not first else 0.5)
    a = _pick(rng, present if first else absent)
    b = _pick(rng, [p for p in (present if second else absent) if p != a])
    truth = (first and second) if op == "and" else (first or second)
    return f"is there a {a[0]} {a[1]} {op} a {b[0]} {b[1]} ?", "yes" if truth else "no"


def _compare(rng, scene, inv):
    pairs = [(a, b) for a in scene.objects for b in scene.objects if a is not b]
    form = _pick(rng, ["larger", "same", "left", "above"])
    if form == "larger":
        diff = [(a, b) for a, b in pairs if a.size != b.size]
        a, b = _pick(rng, diff if diff and rng.random() < 0.7 else pairs)
        big = inv.sizes[-1]
        return f"is {_ref(a)} larger than {_ref(b)} ?", "yes" if (a.size == big and b.size != big) else "no"
    if form == "same":
        a, b = _pick(rng, pairs)
        return f"are {_ref(a)} and {_ref(b)} the same size ?", "yes" if a.size == b.size else "no"
    a, b = _pick(rng, pairs)
    if form == "left":
        return f"is {_ref(a)} left of {_ref(b)} ?", "yes" if a.col < b.col else "no"
    return f"is {_ref(a)} above {_ref(b)} ?", "yes" if a.row < b.row else "no"


TEMPLATES = {
    StructuralType.VERIFY: _verify,
    StructuralType.QUERY: _query,
    StructuralType.CHOOSE: _choose,
    StructuralType.LOGICAL: _logical,
    StructuralType.COMPARE: _compare,
}


def generate_questions(scene, templates=None, seed=0, per_type=2, extra_prob=0.5, inventory=DEFAULT_INVENTORY):
    """Source-language questions for one scene.

    Every type gets ``per_type`` questions; with probability ``extra_prob`` one
    more question of a random type is added, so images differ slightly in
    their type mix while batches stay balanced.
    """
    templates = templates or TEMPLATES
    missing = set(StructuralType) - set(templates)
    if missing:
        raise GenerationError(f"templates missing structural types {sorted(t.value for t in missing)}")
    rng = np.random.default_rng(seed)
    types = [t for t in StructuralType for _ in range(per_type)]
    if rng.random() < extra_prob:
        types.append(_pick(rng, list(StructuralType)))
    out = []
    seen = set()
    for k, st in enumerate(types):
        for _ in range(20):
            text, answer = templates[st](rng, scene, inventory)
            if text not in seen:
                break
        seen.add(text)
        out.append(QuestionRecord(f"{scene.image_id}_q{k}", scene.image_id, text, SOURCE_LANGUAGE, answer, st))
    return out


# -- corpora ------------------------------------------------------------------

def describe_scene(rng, scene, n, inventory=DEFAULT_INVENTORY):
    """``n`` declarative or interrogative sentences about ``scene``."""
    inv = inventory
    rels = scene.relations()
    out = []
    for _ in range(n):
        kind = int(rng.integers(8))
        o = _pick(rng, scene.objects)
        if kind == 0:
            out.append(f"there is a {o.color} {o.shape} .")
        elif kind == 1:
            out.append(f"{_ref(o)} is {o.size} .")
        elif kind == 2 and rels:
            a, r, b = _pick(rng, rels)
            out.append(f"{_ref(a)} is {r} of {_ref(b)} ." if r in ("left", "right") else f"{_ref(a)} is {r} {_ref(b)} .")
        elif kind == 3:
            c = _pick(rng, scene.objects).color
            out.append(f"there are {len(scene.find(color=c))} {c} objects .")
        elif kind == 4:
            others = [b for b in scene.objects if b is not o and b.size != o.size]
            if others:
                b = _pick(rng, others)
                big, small = (o, b) if o.size == inv.sizes[-1] else (b, o)
                out.append(f"{_ref(big)} is larger than {_ref(small)} .")
            else:
                out.append(f"the {o.shape} is {o.color} .")
        elif kind == 5:
            out.append(f"the {o.shape} is {o.color} .")
        else:
            st = _pick(rng, list(StructuralType))
            out.append(TEMPLATES[st](rng, scene, inv)[0])
    return out


def generate_corpus(seed, n_sentences, inventory=DEFAULT_INVENTORY, grid_size=3):
    """Source-language MLM corpus drawn from fresh random scenes."""
    rng = np.random.default_rng(seed)
    out = []
    k = 0
    while len(out) < n_sentences:
        scene, _ = generate_scene(int(rng.integers(2**31)), grid_size, inventory, image_id=f"c{k}")
        out.extend(describe_scene(rng, scene, min(4, n_sentences - len(out)), inventory))
        k += 1
    return out


def source_lexicon(inventory=DEFAULT_INVENTORY):
    """Every word the templates and descriptions can emit, minus digits/punctuation."""
    words = set(inventory.colors) | set(inventory.shapes) | set(inventory.sizes)
    words |= set("is there a the what color shape size object objects how many are or and "
                 "larger than same left right of above below".split())
    return sorted(words)


# -- cipher languages -------------------------------------------------------------

SCRIPTS = (
    "αβγδεζηθικλμνξοπρστυφχψω",
    "абвгдежзиклмнопрстуфхцчшщыэюя",
    "աբգդեզէըթժիլխծկհձղճմյնշոչպջռսվտրցւփքօֆ",
    "აბგდევზთიკლმნოპჟრსტუფქღყშჩცძწჭხჯჰ",
    "אבגדהוזחטיכלמנסעפצקרשת",
    "ㄅㄆㄇㄈㄉㄊㄋㄌㄍㄎㄏㄐㄑㄒㄓㄔㄕㄖㄗㄘㄙㄚㄛㄜㄝㄞㄟㄠㄡㄢㄣㄤㄥㄦ",
)
LATIN = "abcdefghijklmnopqrstuvwxyz"


@dataclass(frozen=True)
class Cipher:
    key: int
    forward: dict
    inverse: dict

    def translate_text(self, text):
        return " ".join(self.forward.get(w, w) for w in text.split())

    def invert_text(self, text):
        return " ".join(self.inverse.get(w, w) for w in text.split())

    @property
    def lexicon(self):
        return set(self.forward.values())


def make_cipher(lang_key, lexicon=None, script=True):
    """Seeded bijection from the source lexicon onto invented word forms.

    Forms are strings of 2-3 syllables over a key-specific consonant/vowel
    split of an alphabet; with ``script`` the alphabet is one of
    :data:`SCRIPTS` chosen by key, which keeps lexicons of keys with different
    scripts disjoint by construction.
    """
    lexicon = sorted(lexicon or source_lexicon())
    rng = np.random.default_rng([int(lang_key), 7919])
    alphabet = SCRIPTS[int(lang_key) % len(SCRIPTS)] if script else LATIN
    letters = list(alphabet)
    rng.shuffle(letters)
    nv = max(3, len(letters) // 4)
    vowels, consonants = letters[:nv], letters[nv:]
    forbidden = set(lexicon)
    forms = []
    seen = set()
    while len(forms) < len(lexicon):
        n_syl = int(rng.integers(2, 4))
        w = "".join(consonants[int(rng.integers(len(consonants)))] + vowels[int(rng.integers(len(vowels)))]
                    for _ in range(n_syl))
        if w in seen or w in forbidden or not script and w.isdigit():
            continue
        seen.add(w)
        forms.append(w)
    order = rng.permutation(len(lexicon))
    forward = {lexicon[i]: forms[j] for i, j in zip(range(len(lexicon)), order)}
    return Cipher(int(lang_key), forward, {v: k for k, v in forward.items()})


def cipher_translate(record, lang_key, language=None, cipher=None):
    """Translate a source-language record; the answer label is unchanged."""
    if record.language != SOURCE_LANGUAGE:
        raise ValueError(f"{record.question_id}: only {SOURCE_LANGUAGE!r} records can be translated")
    cipher = cipher or make_cipher(lang_key)
    return QuestionRecord(record.question_id, record.image_id, cipher.translate_text(record.text),
                          language or f"x{lang_key}", record.answer, record.structural_type)

"""Item universe: ids, subcategory labels, dense features and labeled dyads.

On-disk formats
---------------
items      TSV ``id<TAB>category``
features   binary: ``b"MNMR"``, version u16, F u32, rows u64, then per row
           an u16 id length, the UTF-8 id and F little-endian float32 values
edges      TSV ``src<TAB>dst<TAB>label`` with label in {1, 0}; the label
           column may be omitted when every line is a positive
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"MNMR"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")
_IDLEN = struct.Struct("<H")


class CorpusError(ValueError):
    """Raised for malformed or inconsistent on-disk inputs."""


@dataclass(frozen=True)
class Item:
    id: str
    category: str
    feature_row: int


class Corpus:
    """Immutable item table bound to a float32 feature matrix.

    Row ``i`` of ``features`` belongs to ``ids[i]``. Arithmetic callers
    should go through :meth:`vectors`, which promotes to float64.
    """

    def __init__(self, ids: Sequence[str], categories: Sequence[str], features: np.ndarray):
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2 or features.shape[1] < 1:
            raise CorpusError("features must be a 2-d array with at least one column")
        if len(ids) != features.shape[0] or len(categories) != len(ids):
            raise CorpusError("ids, categories and feature rows differ in length")
        index = {}
        for row, (item_id, cat) in enumerate(zip(ids, categories)):
            if item_id in index:
                raise CorpusError(f"duplicate item id {item_id!r}")
            if not cat:
                raise CorpusError(f"item {item_id!r} has an empty category")
            index[item_id] = row
        bad = ~np.isfinite(features)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise CorpusError(f"non-finite feature value for item {ids[r]!r} (row {r}, column {c})")
        features.setflags(write=False)
        self.ids = list(ids)
        self.categories = list(categories)
        self.features = features
        self.index = index
        cats = sorted(set(self.categories))
        self.category_names = cats
        self.category_codes = _encode(self.categories, cats)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def item(self, item_id: str) -> Item:
        row = self.row(item_id)
        return Item(item_id, self.categories[row], row)

    def row(self, item_id: str) -> int:
        try:
            return self.index[item_id]
        except KeyError:
            raise CorpusError(f"unknown item id {item_id!r}") from None

    def vectors(self, rows=None) -> np.ndarray:
        if rows is None:
            return self.features.astype(np.float64)
        return self.features[rows].astype(np.float64)

    def l2_normalized(self) -> "Corpus":
        norms = np.linalg.norm(self.features.astype(np.float64), axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return Corpus(self.ids, self.categories, self.features / norms)


def _encode(values, vocab):
    lookup = {v: i for i, v in enumerate(vocab)}
    return np.array([lookup[v] for v in values], dtype=np.int64)


@dataclass
class RelationSet:
    """Labeled ordered pairs, stored as corpus row indices.

    ``label`` is 1 for a relationship and 0 for a non-relationship.
    """

    src: np.ndarray
    dst: np.ndarray
    label: np.ndarray
    edge_type: str = ""
    dropped_same_category: int = field(default=0, compare=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int8)
        if not (self.src.shape == self.dst.shape == self.label.shape) or self.src.ndim != 1:
            raise ValueError("src, dst and label must be 1-d arrays of equal length")

    def __len__(self) -> int:
        return len(self.src)

    @property
    def positives(self) -> "RelationSet":
        return self.subset(self.label == 1)

    @property
    def negatives(self) -> "RelationSet":
        return self.subset(self.label == 0)

    def subset(self, idx) -> "RelationSet":
        return RelationSet(self.src[idx], self.dst[idx], self.label[idx], self.edge_type)

    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.label.tolist()))

    @classmethod
    def concat(cls, parts: Iterable["RelationSet"], edge_type: str = "") -> "RelationSet":
        parts = list(parts)
        return cls(
            np.concatenate([p.src for p in parts]),
            np.concatenate([p.dst for p in parts]),
            np.concatenate([p.label for p in parts]),
            edge_type or parts[0].edge_type,
        )


# --- features ---------------------------------------------------------------

def write_features(path, ids: Sequence[str], features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2 or features.shape[0] != len(ids):
        raise CorpusError("feature matrix does not match id list")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, features.shape[1], features.shape[0]))
        for item_id, row in zip(ids, features):
            raw = item_id.encode("utf-8")
            fh.write(_IDLEN.pack(len(raw)))
            fh.write(raw)
            fh.write(row.tobytes())


def read_features(path) -> tuple[list[str], np.ndarray]:
    """Read a feature file; returns ``(ids, float32 matrix)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorpusError(f"{path}: truncated header")
    magic, version, dim, nrows = _HEADER.unpack_from(data, 0)
    if magic != FEATURE_MAGIC:
        raise CorpusError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise CorpusError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise CorpusError(f"{path}: feature dimension must be positive")
    rowbytes = 4 * dim
    ids = []
    out = np.empty((nrows, dim), dtype=np.float32)
    pos = _HEADER.size
    for r in range(nrows):
        if pos + 2 > len(data):
            raise CorpusError(f"{path}: expected {nrows} rows, found {r}")
        (n,) = _IDLEN.unpack_from(data, pos)
        pos += 2
        ids.append(data[pos:pos + n].decode("utf-8"))
        pos += n
        if pos + rowbytes > len(data):
            raise CorpusError(f"{path}: row {r} ({ids[-1]!r}) shorter than dimension {dim}")
        out[r] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += rowbytes
    if pos != len(data):
        raise CorpusError(f"{path}: {len(data) - pos} trailing bytes; dimension mismatch between header and rows")
    return ids, out


# --- items / corpus -----------------------------------------------------------

def read_items(path) -> list[tuple[str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusError(f"{path}:{lineno}: expected 'id<TAB>category'")
            rows.append((parts[0], parts[1]))
    return rows


def write_items(path, ids: Sequence[str], categories: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, cat in zip(ids, categories):
            fh.write(f"{item_id}\t{cat}\n")


def load_corpus(items_path, features_path, normalize: bool = False) -> Corpus:
    """Load the item list and bind every item to its feature row.

    The corpus follows the item-list order. Feature rows for ids absent
    from the item list, and items without a feature row, are errors.
    """
    for p in (items_path, features_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    items = read_items(items_path)
    seen = set()
    for item_id, _ in items:
        if item_id in seen:
            raise CorpusError(f"{items_path}: duplicate item id {item_id!r}")
        seen.add(item_id)
    feat_ids, feats = read_features(features_path)
    row_of = {}
    for r, item_id in enumerate(feat_ids):
        if item_id in row_of:
            raise CorpusError(f"{features_path}: duplicate feature row for {item_id!r}")
        if item_id not in seen:
            raise CorpusError(f"{features_path}: unknown item id {item_id!r} (not in item list)")
        row_of[item_id] = r
    missing = [i for i, _ in items if i not in row_of]
    if missing:
        raise CorpusError(f"{len(missing)} items have no feature row, e.g. {missing[0]!r}")
    order = np.array([row_of[i] for i, _ in items], dtype=np.int64)
    corpus = Corpus([i for i, _ in items], [c for _, c in items], feats[order])
    return corpus.l2_normalized() if normalize else corpus


def save_corpus(corpus: Corpus, items_path, features_path) -> None:
    write_items(items_path, corpus.ids, corpus.categories)
    write_features(features_path, corpus.ids, corpus.features)


# --- relations -----------------------------------------------------------------

def load_relations(corpus: Corpus, edges_path, edge_type: str = "") -> RelationSet:
    """Read an edge TSV into a RelationSet over ``corpus``.

    Same-category pairs and repeated triples are dropped with a warning;
    the same-category count is kept on the result.
    """
    src, dst, lab = [], [], []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                label = 1
            elif len(parts) == 3 and parts[2] in ("0", "1"):
                label = int(parts[2])
            else:
                raise CorpusError(f"{edges_path}:{lineno}: malformed edge line {line!r}")
            for end in parts[:2]:
                if end not in corpus.index:
                    raise CorpusError(f"{edges_path}:{lineno}: unknown item id {end!r}")
            src.append(corpus.index[parts[0]])
            dst.append(corpus.index[parts[1]])
            lab.append(label)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    lab = np.array(lab, dtype=np.int8)
    codes = corpus.category_codes
    cross = codes[src] != codes[dst] if len(src) else np.zeros(0, dtype=bool)
    n_same = int((~cross).sum())
    if n_same:
        logger.warning("%s: dropped %d same-category pairs", edges_path, n_same)
    src, dst, lab = src[cross], dst[cross], lab[cross]
    keep = _first_occurrence(src, dst, lab)
    if len(keep) < len(src):
        logger.warning("%s: dropped %d duplicate pairs", edges_path, len(src) - len(keep))
    rel = RelationSet(src[keep], dst[keep], lab[keep], edge_type)
    rel.dropped_same_category = n_same
    return rel


def _first_occurrence(src, dst, lab) -> np.ndarray:
    seen = set()
    keep = []
    for i, t in enumerate(zip(src.tolist(), dst.tolist(), lab.tolist())):
        if t not in seen:
            seen.add(t)
            keep.append(i)
    return np.array(keep, dtype=np.int64)


def write_relations(path, rel: RelationSet, corpus: Corpus, with_label: bool = True) -> None:
    ids = corpus.ids
    with open(path, "w", encoding="utf-8") as fh:
        for s, d, l in zip(rel.src.tolist(), rel.dst.tolist(), rel.label.tolist()):
            if with_label:
                fh.write(f"{ids[s]}\t{ids[d]}\t{l}\n")
            else:
                fh.write(f"{ids[s]}\t{ids[d]}\n")

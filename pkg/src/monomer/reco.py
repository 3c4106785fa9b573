"""Retrieval for a query item: mixture ranking, per-expert neighbors, and exports.

The query is projected (anchor position and gate) once and compared
against every candidate. Ties are always broken by ascending item id.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus
from .models import LmtParams, MonomerParams, Params, WnnParams, link_probability, project_items, softmax


@dataclass(frozen=True)
class RecoEntry:
    item_id: str
    probability: float
    distance: float
    expert_distances: tuple


@dataclass
class RecoResult:
    query_id: str
    entries: list
    k: int
    gating: tuple = ()


def _candidate_rows(corpus: Corpus, query_row: int, candidates, category_filter: bool) -> np.ndarray:
    if candidates is not None:
        rows = np.array(sorted({corpus.row(c) for c in candidates}), dtype=np.int64)
    else:
        rows = np.arange(len(corpus))
        if category_filter:
            rows = rows[corpus.category_codes != corpus.category_codes[query_row]]
    rows = rows[rows != query_row]
    if rows.size == 0:
        raise ValueError("candidate set is empty")
    return rows


def _id_order(corpus: Corpus, rows: np.ndarray) -> np.ndarray:
    ids = [corpus.ids[r] for r in rows.tolist()]
    rank = np.empty(len(ids), dtype=np.int64)
    rank[sorted(range(len(ids)), key=ids.__getitem__)] = np.arange(len(ids))
    return rank


def expert_distance_matrix(model: Params, corpus: Corpus, query_row: int, rows: np.ndarray):
    """Per-candidate expert distances ``(m, N)`` and the query's gate ``(N,)``.

    Single-embedding models report one column and a gate of ``(1.0,)``.
    """
    q = project_items(model, corpus.features, np.array([query_row]))
    c = project_items(model, corpus.features, rows)
    if isinstance(model, MonomerParams):
        diff = q["anchor"][0][None, None, :] - c["pseudo"]
        return np.einsum("mnk,mnk->mn", diff, diff), softmax(q["logits"][0])
    key = "embedded" if isinstance(model, LmtParams) else "weighted"
    diff = c[key] - q[key][0]
    return np.einsum("mk,mk->m", diff, diff)[:, None], np.ones(1)


def recommend(model: Params, corpus: Corpus, query_id: str, k: int = 10,
              candidates: Optional[Sequence[str]] = None, category_filter: bool = True) -> RecoResult:
    """Rank candidates by link probability (descending)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    qrow = corpus.row(query_id)
    rows = _candidate_rows(corpus, qrow, candidates, category_filter)
    dk, gating = expert_distance_matrix(model, corpus, qrow, rows)
    dist = dk @ gating
    prob = link_probability(dist, model.bias)
    order = np.lexsort((_id_order(corpus, rows), -prob))[:k]
    entries = [RecoEntry(corpus.ids[rows[i]], float(prob[i]), float(dist[i]), tuple(dk[i].tolist()))
               for i in order.tolist()]
    return RecoResult(query_id, entries, k, tuple(gating.tolist()))


def expert_neighbors(model: MonomerParams, corpus: Corpus, query_id: str, expert: int, top_k: int = 10,
                     candidates: Optional[Sequence[str]] = None, category_filter: bool = True):
    """``[(item_id, d_expert)]`` ascending in the expert's distance (1-based expert index)."""
    if not isinstance(model, MonomerParams):
        raise TypeError("expert neighbors need a monomer model")
    if not 1 <= expert <= model.dims[2]:
        raise IndexError(f"expert index {expert} outside 1..{model.dims[2]}")
    qrow = corpus.row(query_id)
    rows = _candidate_rows(corpus, qrow, candidates, category_filter)
    dk, _ = expert_distance_matrix(model, corpus, qrow, rows)
    d = dk[:, expert - 1]
    order = np.lexsort((_id_order(corpus, rows), d))[:top_k]
    return [(corpus.ids[rows[i]], float(d[i])) for i in order.tolist()]


def top_items_per_dimension(embedding, corpus: Corpus, dim: int, top_k: int = 10):
    """Items with the largest projection onto column ``dim`` of ``embedding``."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if not 0 <= dim < embedding.shape[1]:
        raise IndexError(f"dimension {dim} outside 0..{embedding.shape[1] - 1}")
    scores = corpus.vectors() @ embedding[:, dim]
    rows = np.arange(len(corpus))
    order = np.lexsort((_id_order(corpus, rows), -scores))[:top_k]
    return [(corpus.ids[i], float(scores[i])) for i in order.tolist()]


def embedding_matrix(model: Params, which="anchor") -> np.ndarray:
    """``which`` is ``"anchor"`` or a 1-based expert index."""
    if isinstance(model, MonomerParams):
        if which == "anchor" or which == 0:
            return model.anchor
        k = int(which)
        if not 1 <= k <= model.dims[2]:
            raise IndexError(f"expert index {k} outside 1..{model.dims[2]}")
        return model.experts[k - 1]
    if isinstance(model, LmtParams):
        return model.embedding
    if isinstance(model, WnnParams):
        return np.diag(model.weights)
    raise TypeError(f"not a model: {type(model).__name__}")


def export_projections(model: Params, corpus: Corpus, which="anchor", path=None):
    """Write ``id<TAB>category<TAB>comma-separated coordinates``; returns the matrix."""
    coords = corpus.vectors() @ embedding_matrix(model, which)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            for item_id, cat, row in zip(corpus.ids, corpus.categories, coords.tolist()):
                fh.write(f"{item_id}\t{cat}\t{','.join(repr(v) for v in row)}\n")
    return coords

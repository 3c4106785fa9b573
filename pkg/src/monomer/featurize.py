"""Bag-of-words item features from review text.

Tokens are lowercased alphanumeric runs of at least two characters.
Candidate terms are unigrams that are not stop-words and bigrams of
adjacent tokens (within one review) when neither token is a stop-word.
Unigrams and bigrams share one frequency ranking.
"""
from __future__ import annotations

import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import write_features

_TOKEN = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")

    @property
    def size(self) -> int:
        return len(self.terms)

    def index(self) -> dict:
        return {t: i for i, t in enumerate(self.terms)}


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.findall(text.lower()) if len(t) >= 2]


def candidate_terms(text: str, stopwords) -> Iterable[str]:
    toks = tokenize(text)
    for i, tok in enumerate(toks):
        if tok in stopwords:
            continue
        yield tok
        if i + 1 < len(toks) and toks[i + 1] not in stopwords:
            yield f"{tok} {toks[i + 1]}"


def read_reviews(path) -> dict[str, list[str]]:
    """``item_id<TAB>review_text`` lines grouped by item, in file order."""
    reviews = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            item_id, sep, text = line.partition("\t")
            if not sep or not item_id:
                raise ValueError(f"{path}:{lineno}: expected 'item_id<TAB>review_text'")
            reviews[item_id].append(text)
    return dict(reviews)


def read_stopwords(path) -> set[str]:
    if path is None:
        return set()
    return {w.strip().lower() for w in Path(path).read_text(encoding="utf-8").split() if w.strip()}


def count_terms(texts: Iterable[str], stopwords) -> Counter:
    counts = Counter()
    for text in texts:
        counts.update(candidate_terms(text, stopwords))
    return counts


def vocabulary_from_texts(texts: Iterable[str], size: int = 5000, stopwords=frozenset()) -> Vocabulary:
    if size < 1:
        raise ValueError("vocabulary size must be >= 1")
    texts = list(texts)
    if not texts:
        raise ValueError("review corpus is empty")
    counts = count_terms(texts, stopwords)
    if not counts:
        raise ValueError("no candidate terms after stop-word removal")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if size > len(ranked):
        warnings.warn(f"requested {size} terms but only {len(ranked)} distinct terms exist", stacklevel=2)
    return Vocabulary(tuple(t for t, _ in ranked[:size]))


def build_vocabulary(review_corpus, size: int = 5000, stopword_list=None) -> Vocabulary:
    reviews = read_reviews(review_corpus)
    texts = [t for item_texts in reviews.values() for t in item_texts]
    return vocabulary_from_texts(texts, size, read_stopwords(stopword_list))


def bow_vectors(reviews: Mapping[str, Sequence[str]], vocab: Vocabulary, item_ids=None, stopwords=frozenset()):
    """Normalized term counts per item.

    Returns ``(kept_ids, matrix, dropped_ids)``. Items with no reviews or no
    in-vocabulary term are dropped. ``item_ids`` lists items that should be
    considered even if they have no reviews.
    """
    index = vocab.index()
    ids = list(item_ids) if item_ids is not None else list(reviews)
    kept, rows, dropped = [], [], []
    for item_id in ids:
        vec = np.zeros(vocab.size)
        for text in reviews.get(item_id, ()):
            for term in candidate_terms(text, stopwords):
                j = index.get(term)
                if j is not None:
                    vec[j] += 1.0
        total = vec.sum()
        if total == 0:
            dropped.append(item_id)
            continue
        kept.append(item_id)
        rows.append(vec / total)
    matrix = np.array(rows) if rows else np.zeros((0, vocab.size))
    return kept, matrix, dropped


def featurize_items(review_corpus, vocab: Vocabulary, out_path, item_ids=None, stopword_list=None):
    """Write a feature file for every item with at least one in-vocabulary term.

    Returns ``(kept_ids, dropped_ids)``.
    """
    reviews = read_reviews(review_corpus)
    kept, matrix, dropped = bow_vectors(reviews, vocab, item_ids, read_stopwords(stopword_list))
    write_features(out_path, kept, matrix)
    return kept, dropped

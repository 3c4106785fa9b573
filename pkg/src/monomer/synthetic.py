"""Synthetic heterogeneous-compatibility datasets.

Each item has a category and a latent style. Styles come in families:
a family has a base vector ``z`` and its orbit under a small group of
commuting reflections ``A_1 .. A_M`` (``A_m`` flips the m-th block of
coordinates in a randomly rotated basis; a few coordinates are fixed by
every map). Category ``c`` uses map ``A_{c mod M}``, and ``y`` is related
to ``x`` when they are in different categories and

    style(y) = A_{map(cat x)} style(x).

The relation is directed and category dependent, so no single metric
explains it, while a gated mixture of (anchor, expert) projections does.
Observed features are ``[offset * onehot(category), style + noise]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, RelationSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 2000
    n_categories: int = 4
    style_dim: int = 8
    offset: float = 2.0
    noise: float = 0.25
    n_positives: int = 10000
    n_maps: int = 2
    n_families: int = 50
    n_fixed: int = 2      # style coordinates left unchanged by every map
    identity_maps: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n_items", "n_categories", "style_dim", "n_positives", "n_maps", "n_families"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.offset < 0 or self.noise < 0 or self.n_fixed < 0:
            raise ValueError("offset, noise and n_fixed must be non-negative")
        if self.n_categories < 2:
            raise ValueError("need at least two categories")
        if not self.identity_maps and self.style_dim - self.n_fixed < self.n_maps:
            raise ValueError("style_dim too small for the requested number of maps")


@dataclass
class SyntheticTruth:
    rotation: np.ndarray        # (d, d) orthogonal basis
    flips: np.ndarray           # (M, d) diagonal of each reflection in the rotated basis
    maps: np.ndarray            # (M, d, d) the style maps
    category_map: np.ndarray    # category code -> map index
    styles: np.ndarray          # (n, d) noiseless styles
    family: np.ndarray
    orbit: np.ndarray           # bitmask of applied reflections


def _reflections(spec: SyntheticSpec, rng):
    d, M = spec.style_dim, spec.n_maps
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    rotation = q * np.sign(np.diag(r))
    flips = np.ones((M, d))
    if not spec.identity_maps:
        blocks = np.array_split(np.arange(d - spec.n_fixed), M)
        for m, blk in enumerate(blocks):
            flips[m, blk] = -1.0
    maps = np.stack([rotation @ np.diag(f) @ rotation.T for f in flips])
    return rotation, flips, maps


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()):
    """Returns ``(corpus, positives, truth)``; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, d, M, C = spec.n_items, spec.style_dim, spec.n_maps, spec.n_categories
    rotation, flips, maps = _reflections(spec, rng)
    bases = rng.normal(size=(spec.n_families, d))
    n_orbit = 1 if spec.identity_maps else 2 ** M

    category = rng.integers(0, C, size=n)
    family = rng.integers(0, spec.n_families, size=n)
    orbit = rng.integers(0, n_orbit, size=n)
    category_map = np.arange(C) % M

    # style = R diag(prod of applied flips) R^T z
    signs = np.ones((n, d))
    for m in range(M):
        applied = (orbit >> m) & 1 == 1
        signs[applied] *= flips[m]
    styles = ((bases[family] @ rotation) * signs) @ rotation.T

    groups = {}
    for i in range(n):
        groups.setdefault((int(family[i]), int(orbit[i])), []).append(i)
    candidates = []
    for x in range(n):
        step = 0 if spec.identity_maps else 1 << int(category_map[category[x]])
        for y in groups.get((int(family[x]), int(orbit[x]) ^ step), ()):
            if category[y] != category[x]:
                candidates.append((x, y))
    if not candidates:
        raise ValueError("specification yields no related pairs")
    if len(candidates) > spec.n_positives:
        pick = np.sort(rng.choice(len(candidates), size=spec.n_positives, replace=False))
        candidates = [candidates[i] for i in pick]
    elif len(candidates) < spec.n_positives:
        logger.warning("only %d related pairs exist (requested %d)", len(candidates), spec.n_positives)

    noisy = styles + spec.noise * rng.normal(size=styles.shape)
    features = np.concatenate([spec.offset * np.eye(C)[category], noisy], axis=1)
    width = len(str(n - 1))
    ids = [f"i{i:0{width}d}" for i in range(n)]
    cats = [f"c{c}" for c in category]
    corpus = Corpus(ids, cats, features.astype(np.float32))
    pairs = np.array(candidates, dtype=np.int64)
    positives = RelationSet(pairs[:, 0], pairs[:, 1], np.ones(len(pairs), dtype=np.int8), "synthetic")
    truth = SyntheticTruth(rotation, flips, maps, category_map, styles, family, orbit)
    return corpus, positives, truth


def oracle_distance(truth: SyntheticTruth, corpus: Corpus, src, dst) -> np.ndarray:
    """Ground-truth mixture distance ``||A_map(x) s_x - s_y||^2`` on observed styles."""
    C = len(corpus.category_names)
    s = corpus.vectors()[:, C:]
    codes = np.array([int(name[1:]) for name in corpus.category_names])[corpus.category_codes]
    src, dst = np.asarray(src), np.asarray(dst)
    mapped = np.einsum("pij,pj->pi", truth.maps[truth.category_map[codes[src]]], s[src])
    diff = mapped - s[dst]
    return np.einsum("pi,pi->p", diff, diff)

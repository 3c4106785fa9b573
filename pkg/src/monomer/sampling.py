"""Negative dyads by degree-preserving rewiring, and train/validation/test splits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import RelationSet

logger = logging.getLogger(__name__)


class InfeasibleRewiring(RuntimeError):
    def __init__(self, overlapping: int, total: int):
        super().__init__(f"could not rewire: {overlapping} of {total} edges still coincide with positives")
        self.overlapping = overlapping


@dataclass(frozen=True)
class RewireConfig:
    swap_factor: int = 10
    max_retry: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.swap_factor < 1:
            raise ValueError("swap_factor must be >= 1")
        if self.max_retry < 1:
            raise ValueError("max_retry must be >= 1")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.8, 0.1, 0.1)
    train_cap: int = 2_000_000
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) <= 0:
            raise ValueError("need three positive fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")
        if self.train_cap < 1:
            raise ValueError("train_cap must be >= 1")


def sample_negatives(positives: RelationSet, categories, config: RewireConfig = RewireConfig()) -> RelationSet:
    """Rewire ``positives`` into an equally sized negative set.

    Double-edge swaps (a, b), (c, d) -> (a, d), (c, b) keep every item's
    source degree and destination degree. A swap is accepted only if both
    new pairs are cross-category, not self-pairs, not positives and not
    already present. After ``swap_factor * |R|`` accepted swaps, edges still
    equal to a positive get targeted swaps for up to ``max_retry`` rounds.

    ``categories`` maps a corpus row to a category code.
    """
    m = len(positives)
    if m == 0:
        raise ValueError("positive set is empty")
    cat = np.asarray(categories)
    if np.any(cat[positives.src] == cat[positives.dst]):
        raise ValueError("positives must all be cross-category")
    if m < 2:
        raise InfeasibleRewiring(m, m)

    n = int(max(positives.src.max(), positives.dst.max())) + 1
    cat = cat.tolist()
    src = positives.src.tolist()
    dst = positives.dst.tolist()
    positive_keys = {s * n + d for s, d in zip(src, dst)}
    current = set(positive_keys)
    if len(current) != m:
        raise ValueError("positives contain duplicate pairs")
    rng = np.random.default_rng(config.seed)

    def try_swap(i, j, strict=True, dry_run=False):
        """Strict swaps never create a positive; relaxed ones never increase the overlap count."""
        a, b, c, d = src[i], dst[i], src[j], dst[j]
        if a == d or c == b or cat[a] == cat[d] or cat[c] == cat[b]:
            return False
        k1, k2 = a * n + d, c * n + b
        if k1 == k2 or k1 in current or k2 in current:
            return False
        created = (k1 in positive_keys) + (k2 in positive_keys)
        if strict:
            if created:
                return False
        elif created > (a * n + b in positive_keys) + (c * n + d in positive_keys):
            return False
        if dry_run:
            return True
        current.discard(a * n + b)
        current.discard(c * n + d)
        current.add(k1)
        current.add(k2)
        dst[i], dst[j] = d, b
        return True

    budget = config.max_retry * m
    target = config.swap_factor * m
    accepted = attempts = 0
    while accepted < target and attempts < budget:
        block = rng.integers(0, m, size=(min(65536, budget - attempts), 2)).tolist()
        for i, j in block:
            attempts += 1
            if i != j and try_swap(i, j):
                accepted += 1
                if accepted >= target:
                    break
    logger.debug("random phase: %d accepted swaps in %d attempts", accepted, attempts)

    # Targeted phase for edges that still equal a positive. Each stuck edge
    # scans every partner and takes a random strict swap if one exists. When
    # the current set blocks all of them, it takes a random relaxed swap,
    # which may hand the overlap to the partner edge without increasing the
    # number of overlapping edges, so the overlap wanders until it can be
    # removed. Every round ends with |R| strict swap attempts over all edges.
    def stuck_edges():
        return [i for i in range(m) if src[i] * n + dst[i] in positive_keys]

    def feasible_partners(i, strict):
        out = []
        for j in range(m):
            if j != i and try_swap(i, j, strict, dry_run=True):
                out.append(j)
        return out

    stuck = stuck_edges()
    for _ in range(config.max_retry):
        if not stuck:
            break
        for i in stuck:
            if src[i] * n + dst[i] not in positive_keys:
                continue
            partners = feasible_partners(i, strict=True) or feasible_partners(i, strict=False)
            if partners:
                try_swap(i, partners[int(rng.integers(len(partners)))], strict=False)
        for i, j in rng.integers(0, m, size=(m, 2)).tolist():
            if i != j:
                try_swap(i, j)
        stuck = stuck_edges()
    if stuck:
        raise InfeasibleRewiring(len(stuck), m)
    return RelationSet(np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                       np.zeros(m, dtype=np.int8), positives.edge_type)


def split_sizes(total: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = int(math.floor(spec.fractions[1] * total + 1e-9))
    n_test = int(math.floor(spec.fractions[2] * total + 1e-9))
    n_train = min(total - n_val - n_test, spec.train_cap)
    return n_train, n_val, n_test


def split_dataset(pairs: RelationSet, spec: SplitSpec = SplitSpec()):
    """Shuffle with ``spec.seed`` and cut into (train, validation, test).

    Validation and test sizes follow the fractions of the full set; the
    training part is truncated to ``train_cap`` and the excess discarded.
    """
    sizes = split_sizes(len(pairs), spec)
    for name, size in zip(("train", "validation", "test"), sizes):
        if size < 1:
            raise ValueError(f"{name} split is empty for {len(pairs)} pairs")
    n_train, n_val, n_test = sizes
    order = np.random.default_rng(spec.seed).permutation(len(pairs))
    n_train_full = len(pairs) - n_val - n_test
    train = order[:n_train]
    val = order[n_train_full:n_train_full + n_val]
    test = order[n_train_full + n_val:]
    if n_train < n_train_full:
        logger.info("training split capped at %d pairs (%d discarded)", n_train, n_train_full - n_train)
    return pairs.subset(train), pairs.subset(val), pairs.subset(test)

"""Distance functions and parameter containers for Monomer and its baselines.

Every vector argument may carry leading batch dimensions; the trailing
axis is the feature axis of length F. All arithmetic is float64.

Monomer scores an ordered pair (x, y) as a gated mixture of per-expert
squared distances between the query projected through the anchor matrix
and the candidate projected through expert ``k``::

    d_k(x, y) = || E0^T f_x - Ek^T f_y ||^2
    p(k | x)  = softmax(U^T f_x)_k
    d(x, y)   = sum_k p(k | x) d_k(x, y)

Expert indices are 1-based (``E0`` is the anchor).
"""
from __future__ import annotations

import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Union

import numpy as np

MONOMER, LMT, WNN = "monomer", "lmt", "wnn"
KINDS = (MONOMER, LMT, WNN)

RELATED, UNRELATED = "related", "unrelated"


def _f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name}: parameters must be finite")


@dataclass(frozen=True)
class MonomerParams:
    anchor: np.ndarray   # (F, K)
    experts: np.ndarray  # (N, F, K)
    gating: np.ndarray   # (F, N)
    bias: float = 0.0

    def __post_init__(self):
        anchor, experts, gating = _f64(self.anchor), _f64(self.experts), _f64(self.gating)
        if anchor.ndim != 2 or experts.ndim != 3 or gating.ndim != 2:
            raise ValueError("anchor must be (F, K), experts (N, F, K), gating (F, N)")
        F, K = anchor.shape
        N = experts.shape[0]
        if N < 1 or K < 1:
            raise ValueError("need N >= 1 and K >= 1")
        if experts.shape[1:] != (F, K) or gating.shape != (F, N):
            raise ValueError(f"inconsistent shapes: anchor {anchor.shape}, experts {experts.shape}, gating {gating.shape}")
        _check_finite("MonomerParams", anchor, experts, gating, self.bias)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "experts", experts)
        object.__setattr__(self, "gating", gating)
        object.__setattr__(self, "bias", float(self.bias))

    kind = MONOMER

    @property
    def dims(self) -> tuple[int, int, int]:
        F, K = self.anchor.shape
        return F, K, self.experts.shape[0]

    @property
    def n_params(self) -> int:
        F, K, N = self.dims
        return F * (N * K + K + N) + 1

    @property
    def n_embedding_params(self) -> int:
        F, K, N = self.dims
        return F * K * (N + 1)


@dataclass(frozen=True)
class LmtParams:
    embedding: np.ndarray  # (F, K')
    bias: float = 0.0

    def __post_init__(self):
        emb = _f64(self.embedding)
        if emb.ndim != 2 or emb.shape[1] < 1:
            raise ValueError("embedding must be (F, K') with K' >= 1")
        _check_finite("LmtParams", emb, self.bias)
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "bias", float(self.bias))

    kind = LMT

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.embedding.shape[0], self.embedding.shape[1], 0

    @property
    def n_params(self) -> int:
        return self.embedding.size + 1

    @property
    def n_embedding_params(self) -> int:
        return self.embedding.size


@dataclass(frozen=True)
class WnnParams:
    weights: np.ndarray  # (F,)
    bias: float = 0.0

    def __post_init__(self):
        w = _f64(self.weights)
        if w.ndim != 1:
            raise ValueError("weights must be a vector")
        _check_finite("WnnParams", w, self.bias)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    kind = WNN

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.weights.shape[0], 1, 0

    @property
    def n_params(self) -> int:
        return self.weights.size + 1

    @property
    def n_embedding_params(self) -> int:
        return self.weights.size


Params = Union[MonomerParams, LmtParams, WnnParams]


def _pair(F, fx, fy):
    fx, fy = _f64(fx), _f64(fy)
    if fx.shape[-1] != F or fy.shape[-1] != F:
        raise ValueError(f"feature dimension mismatch: expected {F}, got {fx.shape[-1]} and {fy.shape[-1]}")
    return fx, fy


# --- distances ---------------------------------------------------------------

def lmt_distance(params: LmtParams, f_x, f_y) -> np.ndarray:
    fx, fy = _pair(params.embedding.shape[0], f_x, f_y)
    diff = (fx - fy) @ params.embedding
    return np.sum(diff * diff, axis=-1)


def wnn_distance(params: WnnParams, f_x, f_y) -> np.ndarray:
    fx, fy = _pair(params.weights.shape[0], f_x, f_y)
    diff = params.weights * (fx - fy)
    return np.sum(diff * diff, axis=-1)


def expert_distance(params: MonomerParams, k: int, f_x, f_y) -> np.ndarray:
    F, _, N = params.dims
    if not 1 <= k <= N:
        raise IndexError(f"expert index {k} outside 1..{N}")
    fx, fy = _pair(F, f_x, f_y)
    diff = fx @ params.anchor - fy @ params.experts[k - 1]
    return np.sum(diff * diff, axis=-1)


def softmax(logits) -> np.ndarray:
    z = _f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gate(params: MonomerParams, f_x) -> np.ndarray:
    """Expert probabilities for query features ``f_x`` (shape ``(..., N)``)."""
    fx = _f64(f_x)
    if fx.shape[-1] != params.dims[0]:
        raise ValueError(f"feature dimension mismatch: expected {params.dims[0]}, got {fx.shape[-1]}")
    return softmax(fx @ params.gating)


def all_expert_distances(params: MonomerParams, f_x, f_y) -> np.ndarray:
    """Distances under every expert, shape ``(..., N)``."""
    fx, fy = _pair(params.dims[0], f_x, f_y)
    anchor = fx @ params.anchor
    pseudo = np.einsum("...f,nfk->...nk", fy, params.experts)
    diff = anchor[..., None, :] - pseudo
    return np.sum(diff * diff, axis=-1)


def monomer_distance(params: MonomerParams, f_x, f_y) -> np.ndarray:
    dk = all_expert_distances(params, f_x, f_y)
    return np.sum(gate(params, f_x) * dk, axis=-1)


def distance(params: Params, f_x, f_y) -> np.ndarray:
    if isinstance(params, MonomerParams):
        return monomer_distance(params, f_x, f_y)
    if isinstance(params, LmtParams):
        return lmt_distance(params, f_x, f_y)
    if isinstance(params, WnnParams):
        return wnn_distance(params, f_x, f_y)
    raise TypeError(f"not a model: {type(params).__name__}")


def softplus(x) -> np.ndarray:
    return np.logaddexp(0.0, x)


def link_probability(distance, c) -> np.ndarray:
    """P(related) = 1 / (1 + exp(distance - c)); never overflows."""
    return np.exp(log_link_probability(distance, c))


def log_link_probability(distance, c) -> np.ndarray:
    return -softplus(_f64(distance) - c)


def classify(distance, c):
    """``"related"`` iff distance < c; a tie is unrelated."""
    if np.ndim(distance) == 0:
        return RELATED if distance < c else UNRELATED
    return np.where(_f64(distance) < c, RELATED, UNRELATED)


# --- category tree baseline ------------------------------------------------------

@dataclass
class CtModel:
    cooccurrence: dict = field(default_factory=dict)  # src cat -> Counter(dst cat)
    allowed: dict = field(default_factory=dict)        # src cat -> frozenset(dst cats)

    kind = "ct"


def ct_fit(src_categories, dst_categories) -> CtModel:
    """Count subcategory co-occurrences over training positives.

    For every source category keep the ceil(half) most connected
    destination categories; ties go to the lexicographically smaller name.
    """
    counts = defaultdict(Counter)
    for a, b in zip(src_categories, dst_categories):
        counts[a][b] += 1
    allowed = {}
    for a, ctr in counts.items():
        ranked = sorted(ctr.items(), key=lambda kv: (-kv[1], kv[0]))
        keep = math.ceil(0.5 * len(ranked))
        allowed[a] = frozenset(b for b, _ in ranked[:keep])
    return CtModel(dict(counts), allowed)


def ct_predict(model: CtModel, src_category: str, dst_category: str) -> str:
    return RELATED if dst_category in model.allowed.get(src_category, ()) else UNRELATED


# --- batch scoring ----------------------------------------------------------------

def project_items(params: Params, features, rows=None, chunk: int = 8192):
    """Project items once; returns a dict of per-item arrays used by pair scoring.

    ``features`` may be float32 storage; chunks are promoted to float64.
    """
    feats = features if rows is None else None
    n = features.shape[0] if rows is None else len(rows)
    out = {}
    if isinstance(params, MonomerParams):
        F, K, N = params.dims
        blocks = np.concatenate([params.anchor[None], params.experts], axis=0)  # (N+1, F, K)
        wide = np.concatenate([blocks.transpose(1, 0, 2).reshape(F, (N + 1) * K), params.gating], axis=1)
        proj = np.empty((n, wide.shape[1]))
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            x = (features[sl] if feats is not None else features[rows[sl]]).astype(np.float64)
            proj[sl] = x @ wide
        emb = proj[:, : (N + 1) * K].reshape(n, N + 1, K)
        out["anchor"] = emb[:, 0]
        out["pseudo"] = emb[:, 1:]
        out["logits"] = proj[:, (N + 1) * K:]
    elif isinstance(params, LmtParams):
        proj = np.empty((n, params.embedding.shape[1]))
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            x = (features[sl] if feats is not None else features[rows[sl]]).astype(np.float64)
            proj[sl] = x @ params.embedding
        out["embedded"] = proj
    elif isinstance(params, WnnParams):
        x = features if feats is not None else features[rows]
        out["weighted"] = x.astype(np.float64) * params.weights
    else:
        raise TypeError(f"not a model: {type(params).__name__}")
    return out


def pair_distances_from_projections(params: Params, proj_x, proj_y, ix, iy) -> np.ndarray:
    """Distances for pairs ``(ix[j], iy[j])`` given projections of both sides."""
    if isinstance(params, MonomerParams):
        diff = proj_x["anchor"][ix][:, None, :] - proj_y["pseudo"][iy]
        dk = np.einsum("pnk,pnk->pn", diff, diff)
        return np.einsum("pn,pn->p", softmax(proj_x["logits"][ix]), dk)
    key = "embedded" if isinstance(params, LmtParams) else "weighted"
    diff = proj_x[key][ix] - proj_y[key][iy]
    return np.einsum("pk,pk->p", diff, diff)


def score_pairs(params: Params, features, src, dst) -> np.ndarray:
    """Distances for many pairs: project each involved item once, then compare."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if features.shape[1] != params.dims[0]:
        raise ValueError(f"model expects F={params.dims[0]}, features have F={features.shape[1]}")
    items, inv = np.unique(np.concatenate([src, dst]), return_inverse=True)
    proj = project_items(params, features, items)
    return pair_distances_from_projections(params, proj, proj, inv[: len(src)], inv[len(src):])


# --- flat parameter vectors ---------------------------------------------------------

def param_count(kind: str, F: int, K: int = 1, N: int = 1) -> int:
    if kind == MONOMER:
        return F * (N * K + K + N) + 1
    if kind == LMT:
        return F * K + 1
    if kind == WNN:
        return F + 1
    raise ValueError(f"unknown model kind {kind!r}")


def to_vector(params: Params) -> np.ndarray:
    if isinstance(params, MonomerParams):
        parts = [params.anchor.ravel(), params.experts.ravel(), params.gating.ravel()]
    elif isinstance(params, LmtParams):
        parts = [params.embedding.ravel()]
    else:
        parts = [params.weights]
    return np.concatenate(parts + [[params.bias]])


def from_vector(kind: str, theta, F: int, K: int = 1, N: int = 1) -> Params:
    theta = _f64(theta)
    if theta.shape != (param_count(kind, F, K, N),):
        raise ValueError(f"theta has length {theta.size}, expected {param_count(kind, F, K, N)}")
    if kind == MONOMER:
        a = F * K
        b = a + N * F * K
        return MonomerParams(theta[:a].reshape(F, K), theta[a:b].reshape(N, F, K),
                             theta[b:-1].reshape(F, N), theta[-1])
    if kind == LMT:
        return LmtParams(theta[:-1].reshape(F, K), theta[-1])
    return WnnParams(theta[:-1], theta[-1])


# --- model files ------------------------------------------------------------------

MODEL_MAGIC = b"MNMP"
_KIND_TAG = {MONOMER: 1, LMT: 2, WNN: 3}
_TAG_KIND = {v: k for k, v in _KIND_TAG.items()}
_MODEL_HEADER = struct.Struct("<4sBIII")


def save_model(params: Params, path) -> None:
    """Binary container: magic, kind tag, (F, K, N), column-major float64 blocks, bias."""
    F, K, N = params.dims
    if isinstance(params, MonomerParams):
        blocks = [params.anchor] + list(params.experts) + [params.gating]
    elif isinstance(params, LmtParams):
        blocks = [params.embedding]
    else:
        blocks = [params.weights[:, None]]
    with open(path, "wb") as fh:
        fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, _KIND_TAG[params.kind], F, K, N))
        for blk in blocks:
            fh.write(np.asarray(blk, dtype="<f8").tobytes(order="F"))
        fh.write(struct.pack("<d", params.bias))


def load_model(path) -> Params:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _MODEL_HEADER.size:
        raise ValueError(f"{path}: truncated model file")
    magic, tag, F, K, N = _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC or tag not in _TAG_KIND:
        raise ValueError(f"{path}: not a model file")
    kind = _TAG_KIND[tag]
    pos = _MODEL_HEADER.size

    def block(rows, cols):
        nonlocal pos
        n = rows * cols
        if pos + 8 * n > len(data):
            raise ValueError(f"{path}: truncated model file")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape((rows, cols), order="F")
        pos += 8 * n
        return arr.astype(np.float64)

    if kind == MONOMER:
        anchor = block(F, K)
        experts = np.stack([block(F, K) for _ in range(N)])
        params_args = (anchor, experts, block(F, N))
    elif kind == LMT:
        params_args = (block(F, K),)
    else:
        params_args = (block(F, 1)[:, 0],)
    if pos + 8 != len(data):
        raise ValueError(f"{path}: size does not match header dimensions")
    (bias,) = struct.unpack_from("<d", data, pos)
    cls = {MONOMER: MonomerParams, LMT: LmtParams, WNN: WnnParams}[kind]
    return cls(*params_args, bias)

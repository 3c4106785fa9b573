"""Regularized log-likelihood, analytic gradients, and the L-BFGS driver.

The minimized objective is

    sum_{pos} softplus(d - c) + sum_{neg} softplus(c - d) + lam * ||theta_emb||^2

i.e. the negated log-likelihood under P(related) = 1 / (1 + exp(d - c)),
with an L2 penalty on every embedding, gating and weight entry but not
on the threshold ``c``.

Pairs are processed in fixed-size chunks whose partial sums are merged
by a pairwise tree in chunk order, so the result does not depend on the
number of worker threads.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .corpus import RelationSet
from .models import KINDS, LMT, MONOMER, WNN, from_vector, param_count

logger = logging.getLogger(__name__)

CHUNK = 4096

CONVERGED, MAX_ITER, LINE_SEARCH_FAILURE = "converged", "max-iter", "line-search-failure"


@dataclass
class TrainConfig:
    max_iterations: int = 200
    lbfgs_history: int = 10
    gtol: float = 1e-5   # relative to the initial max-abs gradient
    ftol: float = 1e-7   # relative objective change between iterations
    init_scale: Optional[float] = None  # None -> sqrt(6 / (F + K))
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.gtol <= 0 or self.ftol <= 0:
            raise ValueError("tolerances must be positive")
        if self.lbfgs_history < 1:
            raise ValueError("lbfgs_history must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class Objective:
    kind: str
    lam: float
    pairs: RelationSet
    features: np.ndarray  # (n_items, F), any float dtype
    k: int = 1
    n: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if len(self.pairs) == 0:
            raise ValueError("training pairs are empty")
        if self.kind == WNN:
            self.k, self.n = 1, 0
        elif self.kind == LMT:
            self.n = 0
        if self.k < 1 or (self.kind == MONOMER and self.n < 1):
            raise ValueError("need K >= 1 and, for monomer, N >= 1")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_params(self) -> int:
        return param_count(self.kind, self.dim, self.k, self.n)

    def unpack(self, theta):
        return from_vector(self.kind, theta, self.dim, self.k, self.n)

    def chunks(self):
        m = len(self.pairs)
        return [slice(s, min(m, s + CHUNK)) for s in range(0, m, CHUNK)]


class NonFiniteError(FloatingPointError):
    pass


# --- per-chunk likelihood and gradients ------------------------------------------

def _nll(d, c, t):
    return np.where(t == 1, np.logaddexp(0.0, d - c), np.logaddexp(0.0, c - d))


def _chunk_monomer(theta, obj, sl, want_grad):
    F, K, N = obj.dim, obj.k, obj.n
    a, b = F * K, F * K * (N + 1)
    E0 = theta[:a].reshape(F, K)
    E = theta[a:b].reshape(N, F, K)
    U = theta[b:-1].reshape(F, N)
    c = theta[-1]
    fx = obj.features[obj.pairs.src[sl]].astype(np.float64)
    fy = obj.features[obj.pairs.dst[sl]].astype(np.float64)
    t = obj.pairs.label[sl]
    m = fx.shape[0]

    anchor = fx @ E0
    pseudo = (fy @ E.transpose(1, 0, 2).reshape(F, N * K)).reshape(m, N, K)
    diff = anchor[:, None, :] - pseudo
    dk = np.einsum("mnk,mnk->mn", diff, diff)
    z = fx @ U
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    d = np.einsum("mn,mn->m", p, dk)
    losses = _nll(d, c, t)
    if not want_grad:
        return losses, None

    g = expit(d - c) - (1 - t)  # dL/dd
    grad = np.empty_like(theta)
    grad[:a] = (fx.T @ (2.0 * g[:, None] * np.einsum("mn,mnk->mk", p, diff))).ravel()
    gb = (-2.0 * (g[:, None] * p))[:, :, None] * diff
    grad[a:b] = (fy.T @ gb.reshape(m, N * K)).reshape(F, N, K).transpose(1, 0, 2).ravel()
    grad[b:-1] = (fx.T @ (g[:, None] * p * (dk - d[:, None]))).ravel()
    grad[-1] = -g.sum()
    return losses, grad


def _chunk_lmt(theta, obj, sl, want_grad):
    F, K = obj.dim, obj.k
    E = theta[:-1].reshape(F, K)
    c = theta[-1]
    delta = (obj.features[obj.pairs.src[sl]].astype(np.float64)
             - obj.features[obj.pairs.dst[sl]].astype(np.float64))
    t = obj.pairs.label[sl]
    proj = delta @ E
    d = np.einsum("mk,mk->m", proj, proj)
    losses = _nll(d, c, t)
    if not want_grad:
        return losses, None
    g = expit(d - c) - (1 - t)
    grad = np.empty_like(theta)
    grad[:-1] = (delta.T @ (2.0 * g[:, None] * proj)).ravel()
    grad[-1] = -g.sum()
    return losses, grad


def _chunk_wnn(theta, obj, sl, want_grad):
    w = theta[:-1]
    c = theta[-1]
    delta = (obj.features[obj.pairs.src[sl]].astype(np.float64)
             - obj.features[obj.pairs.dst[sl]].astype(np.float64))
    t = obj.pairs.label[sl]
    sq = delta * delta
    d = sq @ (w * w)
    losses = _nll(d, c, t)
    if not want_grad:
        return losses, None
    g = expit(d - c) - (1 - t)
    grad = np.empty_like(theta)
    grad[:-1] = 2.0 * w * (g @ sq)
    grad[-1] = -g.sum()
    return losses, grad


_CHUNK_FN = {MONOMER: _chunk_monomer, LMT: _chunk_lmt, WNN: _chunk_wnn}


def _tree_sum(values):
    values = list(values)
    while len(values) > 1:
        nxt = [values[i] + values[i + 1] for i in range(0, len(values) - 1, 2)]
        if len(values) % 2:
            nxt.append(values[-1])
        values = nxt
    return values[0]


def _evaluate(theta, obj: Objective, want_grad: bool):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (obj.n_params,):
        raise ValueError(f"theta has length {theta.size}, expected {obj.n_params}")
    fn = _CHUNK_FN[obj.kind]
    chunks = obj.chunks()

    def work(sl):
        losses, grad = fn(theta, obj, sl, want_grad)
        if not np.all(np.isfinite(losses)):
            bad = sl.start + int(np.flatnonzero(~np.isfinite(losses))[0])
            raise NonFiniteError(
                f"non-finite loss at pair {bad} "
                f"(src row {obj.pairs.src[bad]}, dst row {obj.pairs.dst[bad]})")
        return float(losses.sum()), grad

    if obj.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=obj.threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(sl) for sl in chunks]

    emb = theta[:-1]
    value = _tree_sum([p[0] for p in parts]) + obj.lam * float(emb @ emb)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite objective value")
    if not want_grad:
        return value, None
    grad = _tree_sum([p[1] for p in parts])
    grad[:-1] += 2.0 * obj.lam * emb
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite gradient in block {_block_of(obj, int(np.flatnonzero(~np.isfinite(grad))[0]))}")
    return value, grad


def _block_of(obj, i):
    F, K, N = obj.dim, obj.k, obj.n
    if i == obj.n_params - 1:
        return "bias"
    if obj.kind == MONOMER:
        if i < F * K:
            return "anchor"
        if i < F * K * (N + 1):
            return f"expert{(i - F * K) // (F * K) + 1}"
        return "gating"
    return "embedding" if obj.kind == LMT else "weights"


def objective_value(theta, obj: Objective) -> float:
    return _evaluate(theta, obj, False)[0]


def objective_gradient(theta, obj: Objective) -> np.ndarray:
    return _evaluate(theta, obj, True)[1]


def value_and_gradient(theta, obj: Objective):
    return _evaluate(theta, obj, True)


def finite_difference_gradient(theta, obj: Objective, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``objective_value``; for checking the analytic gradient."""
    theta = np.array(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        fp = objective_value(theta, obj)
        theta[i] = orig - h
        fm = objective_value(theta, obj)
        theta[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# --- initialization and optimization ---------------------------------------------

def init_params(kind: str, F: int, K: int = 1, N: int = 1, config: Optional[TrainConfig] = None) -> np.ndarray:
    """Uniform(-a, a) embedding/gating entries with a = sqrt(6 / (F + K)); bias 0."""
    config = config or TrainConfig()
    if F < 1 or K < 1 or (kind == MONOMER and N < 1):
        raise ValueError("dimensions must be positive")
    if kind == WNN:
        K = 1
    scale = math.sqrt(6.0 / (F + K)) if config.init_scale is None else config.init_scale
    rng = np.random.default_rng(config.seed)
    theta = rng.uniform(-1.0, 1.0, size=param_count(kind, F, K, N)) * scale
    theta[-1] = 0.0
    return theta


@dataclass
class TrainReport:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    status: str = MAX_ITER
    iterations: int = 0
    evaluations: int = 0
    wall_time: float = 0.0
    lam: float = 0.0
    kind: str = ""

    def lines(self):
        for i, (f, g, s) in enumerate(zip(self.objective, self.grad_norm, self.step)):
            yield json.dumps({"iteration": i, "objective": f, "grad_norm": g, "step": s})

    def summary(self) -> dict:
        out = asdict(self)
        for key in ("objective", "grad_norm", "step"):
            out.pop(key)
        out["initial_objective"] = self.objective[0] if self.objective else None
        out["final_objective"] = self.objective[-1] if self.objective else None
        return out


def train(obj: Objective, config: Optional[TrainConfig] = None, theta0=None):
    """Minimize ``obj`` with L-BFGS; returns ``(params, TrainReport)``.

    Stops when the relative objective change falls below ``ftol``, when the
    max-abs gradient drops below ``gtol`` times its initial value, or after
    ``max_iterations`` iterations.
    """
    config = config or TrainConfig()
    obj.threads = config.threads
    start = time.perf_counter()
    theta = init_params(obj.kind, obj.dim, obj.k, obj.n, config) if theta0 is None \
        else np.array(theta0, dtype=np.float64)
    try:
        f0, g0 = value_and_gradient(theta, obj)
    except NonFiniteError as err:
        raise NonFiniteError(f"objective is not finite at initialization: {err}") from err

    report = TrainReport(objective=[f0], grad_norm=[float(np.linalg.norm(g0))], step=[0.0],
                         lam=obj.lam, kind=obj.kind, evaluations=1)
    if config.max_iterations == 0:
        report.status = MAX_ITER
        report.wall_time = time.perf_counter() - start
        return obj.unpack(theta), report

    recent = []  # (theta, f, g) of the last evaluations

    def fun(x):
        f, g = value_and_gradient(x, obj)
        report.evaluations += 1
        recent.append((x.copy(), f, g))
        del recent[:-8]
        return f, g

    best = [f0, theta.copy()]
    prev = [theta.copy()]

    def callback(intermediate_result):
        x, f = intermediate_result.x, float(intermediate_result.fun)
        g = next((gg for xx, ff, gg in reversed(recent) if np.array_equal(xx, x)), None)
        gnorm = float(np.linalg.norm(g)) if g is not None else float("nan")
        report.objective.append(f)
        report.grad_norm.append(gnorm)
        report.step.append(float(np.linalg.norm(x - prev[0])))
        prev[0] = x.copy()
        if f <= best[0]:
            best[0], best[1] = f, x.copy()

    gtol = config.gtol * max(1.0, float(np.max(np.abs(g0))))
    res = minimize(fun, theta, jac=True, method="L-BFGS-B", callback=callback,
                   options=dict(maxcor=config.lbfgs_history, maxiter=config.max_iterations,
                                ftol=config.ftol, gtol=gtol, maxls=40))
    if res.status == 0:
        report.status = CONVERGED
    elif res.status == 1:
        report.status = MAX_ITER
    else:
        report.status = LINE_SEARCH_FAILURE
        logger.warning("line search failed: %s", res.message)
    if res.fun < best[0]:
        best[0], best[1] = float(res.fun), np.array(res.x)
    report.iterations = len(report.objective) - 1
    report.wall_time = time.perf_counter() - start
    return obj.unpack(best[1]), report


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)

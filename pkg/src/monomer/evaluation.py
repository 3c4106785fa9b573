"""Error rates, validation-driven lambda selection and model comparison tables."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus, RelationSet
from .models import CtModel, Params, ct_fit, score_pairs
from .training import Objective, TrainConfig, TrainReport, train

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.1, 1.0, 10.0)


@dataclass
class EvalResult:
    error_rate: float
    tp: int
    fp: int
    tn: int
    fn: int
    split: str = "test"
    model_kind: str = ""

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(labels, predicted_related, split="test", model_kind="") -> EvalResult:
    labels = np.asarray(labels) == 1
    pred = np.asarray(predicted_related, dtype=bool)
    if labels.size == 0:
        raise ValueError(f"{split} split is empty")
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    tn = int(np.sum(~pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return EvalResult((fp + fn) / labels.size, tp, fp, tn, fn, split, model_kind)


def predict_related(model, corpus: Corpus, pairs: RelationSet) -> np.ndarray:
    if isinstance(model, CtModel):
        cats = corpus.categories
        return np.array([cats[d] in model.allowed.get(cats[s], ())
                         for s, d in zip(pairs.src.tolist(), pairs.dst.tolist())], dtype=bool)
    if model.dims[0] != corpus.dim:
        raise ValueError(f"model expects F={model.dims[0]} but corpus has F={corpus.dim}")
    return score_pairs(model, corpus.features, pairs.src, pairs.dst) < model.bias


def evaluate(model, corpus: Corpus, pairs: RelationSet, split: str = "test") -> EvalResult:
    """Misclassification rate with "related" iff distance < c."""
    if len(pairs) == 0:
        raise ValueError(f"{split} split is empty")
    return confusion(pairs.label, predict_related(model, corpus, pairs), split, model.kind)


def fit_ct(corpus: Corpus, train_pairs: RelationSet) -> CtModel:
    pos = train_pairs.positives
    cats = corpus.categories
    return ct_fit([cats[i] for i in pos.src.tolist()], [cats[i] for i in pos.dst.tolist()])


@dataclass
class LambdaSelection:
    best_lambda: float
    errors: dict
    models: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    @property
    def best_model(self) -> Params:
        return self.models[self.best_lambda]

    @property
    def best_report(self) -> TrainReport:
        return self.reports[self.best_lambda]


def select_lambda(kind: str, grid: Sequence[float], train_pairs: RelationSet, validation: RelationSet,
                  corpus: Corpus, k: int = 1, n: int = 1,
                  config: Optional[TrainConfig] = None) -> LambdaSelection:
    """Train once per grid value; keep the lowest validation error (ties -> smaller lambda)."""
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    sel = LambdaSelection(best_lambda=grid[0], errors={})
    for lam in grid:
        params, report = train(Objective(kind, lam, train_pairs, corpus.features, k=k, n=n), config)
        err = evaluate(params, corpus, validation, "validation").error_rate
        logger.info("%s lambda=%g validation error %.4f (%s after %d iterations)",
                    kind, lam, err, report.status, report.iterations)
        sel.errors[lam], sel.models[lam], sel.reports[lam] = err, params, report
        if err < sel.errors[sel.best_lambda]:
            sel.best_lambda = lam
    return sel


@dataclass
class ModelConfig:
    kind: str                 # monomer | lmt | wnn | ct
    k: int = 1
    n: int = 1
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    label: str = ""
    params: Optional[Params] = None  # evaluate as given instead of training

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "monomer":
            return f"monomer(K={self.k},N={self.n})"
        if self.kind == "lmt":
            return f"lmt(K={self.k})"
        return self.kind


@dataclass
class ComparisonRow:
    name: str
    result: EvalResult
    best_lambda: Optional[float] = None
    report: Optional[TrainReport] = None


def compare_models(corpus: Corpus, train_pairs: RelationSet, validation: RelationSet, test: RelationSet,
                   configs: Sequence[ModelConfig], config: Optional[TrainConfig] = None) -> list[ComparisonRow]:
    """Fit every configuration on shared splits and report test error."""
    for cfg in configs:
        if cfg.params is not None and cfg.params.dims[0] != corpus.dim:
            raise ValueError(f"{cfg.name}: model expects F={cfg.params.dims[0]} but corpus has F={corpus.dim}")
        if cfg.kind not in ("monomer", "lmt", "wnn", "ct"):
            raise ValueError(f"unknown model kind {cfg.kind!r}")
    rows = []
    for cfg in configs:
        if cfg.params is not None:
            rows.append(ComparisonRow(cfg.name, evaluate(cfg.params, corpus, test)))
        elif cfg.kind == "ct":
            rows.append(ComparisonRow(cfg.name, evaluate(fit_ct(corpus, train_pairs), corpus, test)))
        else:
            sel = select_lambda(cfg.kind, cfg.lambda_grid, train_pairs, validation, corpus, cfg.k, cfg.n, config)
            rows.append(ComparisonRow(cfg.name, evaluate(sel.best_model, corpus, test),
                                      sel.best_lambda, sel.best_report))
    return rows


_COLUMNS = ("model", "error", "lambda", "tp", "fp", "tn", "fn")


def _cells(row: ComparisonRow):
    r = row.result
    lam = "-" if row.best_lambda is None else f"{row.best_lambda:g}"
    return (row.name, f"{r.error_rate:.4f}", lam, str(r.tp), str(r.fp), str(r.tn), str(r.fn))


def comparison_tsv(rows: Sequence[ComparisonRow]) -> str:
    lines = ["\t".join(_COLUMNS)] + ["\t".join(_cells(r)) for r in rows]
    return "\n".join(lines) + "\n"


def comparison_text(rows: Sequence[ComparisonRow]) -> str:
    table = [_COLUMNS] + [_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(_COLUMNS))]
    out = []
    for line in table:
        out.append("  ".join(cell.ljust(w) if i == 0 else cell.rjust(w)
                             for i, (cell, w) in enumerate(zip(line, widths))))
    return "\n".join(out) + "\n"

"""Command-line entry point: ``monomer <subcommand> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Any long option may also come from ``--config FILE`` (``key=value`` lines,
key spelled like the option without dashes); command-line flags win.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .corpus import Corpus, RelationSet, load_corpus, load_relations, read_items, write_relations
from .evaluation import (DEFAULT_LAMBDA_GRID, ModelConfig, compare_models, comparison_text,
                         comparison_tsv, evaluate, select_lambda)
from .featurize import build_vocabulary, featurize_items, read_reviews
from .models import load_model, save_model
from .reco import embedding_matrix, expert_neighbors, export_projections, recommend, top_items_per_dimension
from .sampling import RewireConfig, SplitSpec, sample_negatives, split_dataset
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainConfig, default_threads

logger = logging.getLogger("monomer")

DEFAULT_SEED = 0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _item_corpus(items_path) -> Corpus:
    """Corpus with ids and categories only, for commands that never read features."""
    if not Path(items_path).is_file():
        raise FileNotFoundError(f"no such file: {items_path}")
    items = read_items(items_path)
    return Corpus([i for i, _ in items], [c for _, c in items], np.zeros((len(items), 1), np.float32))


def _load(args) -> Corpus:
    return load_corpus(args.items, args.features, normalize=getattr(args, "normalize", False))


def _out(path):
    return open(path, "w", encoding="utf-8") if path else contextlib.nullcontext(sys.stdout)


def _grid(text):
    return tuple(float(v) for v in text.split(","))


# --- subcommands -------------------------------------------------------------------

def cmd_synth(args):
    spec = SyntheticSpec(n_items=args.n_items, n_categories=args.categories, style_dim=args.style_dim,
                         offset=args.offset, noise=args.noise, n_positives=args.positives,
                         n_maps=args.maps, n_families=args.families, seed=args.seed)
    corpus, positives, truth = generate_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(corpus, out / "items.tsv", out / "features.mnmr")
    write_relations(out / "positives.tsv", positives, corpus, with_label=False)
    (out / "truth.json").write_text(json.dumps({
        "maps": truth.maps.tolist(), "category_map": truth.category_map.tolist(),
        "rotation": truth.rotation.tolist(), "flips": truth.flips.tolist()}) + "\n")
    logger.info("wrote %d items and %d positives to %s", len(corpus), len(positives), out)


def cmd_featurize(args):
    vocab = build_vocabulary(args.reviews, args.vocab_size, args.stopwords)
    item_ids = [i for i, _ in read_items(args.items)] if args.items else None
    kept, dropped = featurize_items(args.reviews, vocab, args.out, item_ids, args.stopwords)
    if args.vocab_out:
        Path(args.vocab_out).write_text("".join(t + "\n" for t in vocab.terms), encoding="utf-8")
    if args.dropped:
        Path(args.dropped).write_text("".join(i + "\n" for i in dropped), encoding="utf-8")
    if args.items and args.items_out:
        keep = set(kept)
        rows = [(i, c) for i, c in read_items(args.items) if i in keep]
        corpus_mod.write_items(args.items_out, [i for i, _ in rows], [c for _, c in rows])
    logger.info("featurized %d items (F=%d), dropped %d", len(kept), vocab.size, len(dropped))


def cmd_sample_negatives(args):
    corpus = _item_corpus(args.items)
    positives = load_relations(corpus, args.edges).positives
    config = RewireConfig(swap_factor=args.swap_factor, max_retry=args.max_retry, seed=args.seed)
    negatives = sample_negatives(positives, corpus.category_codes, config)
    write_relations(args.out, negatives, corpus)
    logger.info("wrote %d negatives", len(negatives))


def cmd_split(args):
    corpus = _item_corpus(args.items)
    pairs = RelationSet.concat([load_relations(corpus, p) for p in args.edges])
    spec = SplitSpec(fractions=_grid(args.fractions), train_cap=args.train_cap, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "validation", "test"), split_dataset(pairs, spec)):
        write_relations(out / f"{name}.tsv", part, corpus)
        logger.info("%s: %d pairs", name, len(part))


def cmd_train(args):
    corpus = _load(args)
    train_pairs = load_relations(corpus, args.train)
    config = TrainConfig(max_iterations=args.max_iters, lbfgs_history=args.history, seed=args.seed,
                         threads=args.threads or default_threads())
    grid = _grid(args.lambda_grid) if args.lambda_grid else (args.lam,)
    if len(grid) > 1 and not args.validation:
        raise UsageError("--lambda-grid needs --validation")
    validation = load_relations(corpus, args.validation) if args.validation else train_pairs
    sel = select_lambda(args.model, grid, train_pairs, validation, corpus, args.k, args.n, config)
    save_model(sel.best_model, args.out)
    report = sel.best_report
    if args.log:
        Path(args.log).write_text("".join(line + "\n" for line in report.lines()))
    summary = report.summary()
    summary.pop("wall_time")
    summary["validation_errors"] = {f"{k:g}": v for k, v in sel.errors.items()}
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    logger.info("trained %s (lambda=%g): %s after %d iterations, objective %.6g -> %.6g, %.2fs",
                args.model, sel.best_lambda, report.status, report.iterations,
                report.objective[0], report.objective[-1], report.wall_time)


def cmd_evaluate(args):
    corpus = _load(args)
    model = load_model(args.model)
    pairs = load_relations(corpus, args.pairs)
    res = evaluate(model, corpus, pairs, args.split)
    with _out(args.out) as fh:
        fh.write("split\tmodel\terror\ttp\tfp\ttn\tfn\n")
        fh.write(f"{res.split}\t{res.model_kind}\t{res.error_rate:.4f}\t{res.tp}\t{res.fp}\t{res.tn}\t{res.fn}\n")


def _model_configs(text, grid):
    configs = []
    for token in text.split(","):
        parts = token.strip().split(":")
        kind = parts[0]
        if kind == "monomer":
            k, n = (int(parts[1]), int(parts[2])) if len(parts) == 3 else (5, 3)
            configs.append(ModelConfig(kind, k, n, grid))
        elif kind == "lmt":
            configs.append(ModelConfig(kind, int(parts[1]) if len(parts) > 1 else 20, 0, grid))
        elif kind in ("wnn", "ct"):
            configs.append(ModelConfig(kind, 1, 0, grid))
        else:
            raise UsageError(f"unknown model spec {token!r}")
    return configs


def cmd_compare(args):
    corpus = _load(args)
    splits = [load_relations(corpus, p) for p in (args.train, args.validation, args.test)]
    config = TrainConfig(max_iterations=args.max_iters, seed=args.seed, threads=args.threads or default_threads())
    rows = compare_models(corpus, *splits, _model_configs(args.models, _grid(args.lambda_grid)), config)
    if args.out:
        Path(args.out).write_text(comparison_tsv(rows))
    sys.stdout.write(comparison_text(rows))


def cmd_recommend(args):
    corpus = _load(args)
    model = load_model(args.model)
    candidates = Path(args.candidates).read_text().split() if args.candidates else None
    res = recommend(model, corpus, args.query, args.top_k, candidates, not args.no_category_filter)
    with _out(args.out) as fh:
        fh.write("rank\titem_id\tprobability\tdistance\texpert_distances\tgating\n")
        gating = ",".join(repr(g) for g in res.gating)
        for rank, e in enumerate(res.entries, 1):
            fh.write(f"{rank}\t{e.item_id}\t{e.probability!r}\t{e.distance!r}\t"
                     f"{','.join(repr(v) for v in e.expert_distances)}\t{gating}\n")


def cmd_expert_neighbors(args):
    corpus = _load(args)
    model = load_model(args.model)
    candidates = Path(args.candidates).read_text().split() if args.candidates else None
    ranked = expert_neighbors(model, corpus, args.query, args.expert, args.top_k, candidates,
                              not args.no_category_filter)
    with _out(args.out) as fh:
        fh.write("rank\titem_id\tdistance\n")
        for rank, (item_id, d) in enumerate(ranked, 1):
            fh.write(f"{rank}\t{item_id}\t{d!r}\n")


def _which(text):
    return text if text == "anchor" else int(text)


def cmd_top_dims(args):
    corpus = _load(args)
    emb = embedding_matrix(load_model(args.model), _which(args.which))
    dims = [args.dim] if args.dim is not None else range(emb.shape[1])
    with _out(args.out) as fh:
        fh.write("dimension\trank\titem_id\tscore\n")
        for dim in dims:
            for rank, (item_id, score) in enumerate(top_items_per_dimension(emb, corpus, dim, args.top_k), 1):
                fh.write(f"{dim}\t{rank}\t{item_id}\t{score!r}\n")


def cmd_export_projections(args):
    corpus = _load(args)
    export_projections(load_model(args.model), corpus, _which(args.which), args.out)


# --- parser ------------------------------------------------------------------------

def _corpus_args(p, features=True):
    p.add_argument("--items", required=True, help="item list TSV (id, category)")
    if features:
        p.add_argument("--features", required=True, help="binary feature file")
        p.add_argument("--normalize", action="store_true", help="L2-normalize feature rows")


def _candidate_args(p):
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--candidates", help="file of candidate ids (whitespace separated)")
    p.add_argument("--no-category-filter", action="store_true",
                   help="also rank items from the query's own category")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monomer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="key=value file supplying option defaults")
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus with known compatibility maps")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--n-items", type=int, default=SyntheticSpec.n_items)
    p.add_argument("--categories", type=int, default=SyntheticSpec.n_categories)
    p.add_argument("--style-dim", type=int, default=SyntheticSpec.style_dim)
    p.add_argument("--positives", type=int, default=SyntheticSpec.n_positives)
    p.add_argument("--maps", type=int, default=SyntheticSpec.n_maps)
    p.add_argument("--families", type=int, default=SyntheticSpec.n_families)
    p.add_argument("--noise", type=float, default=SyntheticSpec.noise)
    p.add_argument("--offset", type=float, default=SyntheticSpec.offset)

    p = add("featurize", cmd_featurize, "bag-of-words features from review text")
    p.add_argument("--reviews", required=True, help="TSV item_id<TAB>review_text")
    p.add_argument("--vocab-size", type=int, default=5000)
    p.add_argument("--stopwords", help="whitespace-separated stop-word file")
    p.add_argument("--items", help="item list; items without usable reviews are dropped from it")
    p.add_argument("--items-out", help="write the filtered item list here")
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--dropped", help="write dropped item ids here")
    p.add_argument("--vocab-out")

    p = add("sample-negatives", cmd_sample_negatives, "degree-preserving negative pairs")
    _corpus_args(p, features=False)
    p.add_argument("--edges", required=True, help="positive edge TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--swap-factor", type=int, default=RewireConfig.swap_factor)
    p.add_argument("--max-retry", type=int, default=RewireConfig.max_retry)

    p = add("split", cmd_split, "train/validation/test split of labeled pairs")
    _corpus_args(p, features=False)
    p.add_argument("--edges", required=True, nargs="+", help="edge TSVs (positives and negatives)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--train-cap", type=int, default=SplitSpec.train_cap)
    p.add_argument("--fractions", default="0.8,0.1,0.1")

    p = add("train", cmd_train, "fit a model with L-BFGS")
    _corpus_args(p)
    p.add_argument("--train", required=True)
    p.add_argument("--validation")
    p.add_argument("--model", choices=("monomer", "lmt", "wnn"), default="monomer")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--lambda-grid", help="comma-separated values, selected on --validation")
    p.add_argument("--max-iters", type=int, default=TrainConfig.max_iterations)
    p.add_argument("--history", type=int, default=TrainConfig.lbfgs_history)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--threads", type=int, default=0, help="0 = available cores")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--log", help="per-iteration JSON lines")
    p.add_argument("--summary", help="JSON summary")

    p = add("evaluate", cmd_evaluate, "error rate of a model on labeled pairs")
    _corpus_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out")

    p = add("compare", cmd_compare, "train and compare several models on shared splits")
    _corpus_args(p)
    p.add_argument("--train", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--models", default="wnn,lmt:20,monomer:5:3",
                   help="comma list of wnn | ct | lmt:K | monomer:K:N")
    p.add_argument("--lambda-grid", default=",".join(f"{g:g}" for g in DEFAULT_LAMBDA_GRID))
    p.add_argument("--max-iters", type=int, default=TrainConfig.max_iterations)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--out", help="TSV table")

    p = add("recommend", cmd_recommend, "rank candidates for a query item")
    _corpus_args(p)
    _candidate_args(p)

    p = add("expert-neighbors", cmd_expert_neighbors, "nearest candidates under one expert")
    _corpus_args(p)
    _candidate_args(p)
    p.add_argument("--expert", type=int, required=True, help="1-based expert index")

    p = add("top-dims", cmd_top_dims, "items with the largest projection per embedding dimension")
    _corpus_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--which", default="anchor", help="anchor or a 1-based expert index")
    p.add_argument("--dim", type=int)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out")

    p = add("export-projections", cmd_export_projections, "write K-d item projections as TSV")
    _corpus_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--which", default="anchor", help="anchor or a 1-based expert index")
    p.add_argument("--out", required=True)
    return parser


def _config_tokens(path) -> list[str]:
    tokens = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            tokens += [flag, value]
    return tokens


def _expand_config(argv: list[str]) -> list[str]:
    for i, tok in enumerate(argv):
        path = tok.split("=", 1)[1] if tok.startswith("--config=") else (
            argv[i + 1] if tok == "--config" and i + 1 < len(argv) else None)
        if path is None:
            continue
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        cmd_at = next(j for j, t in enumerate(argv) if not t.startswith("-"))
        return argv[:cmd_at + 1] + _config_tokens(path) + argv[cmd_at + 1:]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_expand_config(argv))
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except Exception as err:  # runtime failures map to exit status 2
        logger.debug("traceback", exc_info=True)
        print(f"monomer {args.command}: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Compare WNN, CT, LMT and Monomer on synthetic data with known latent maps.

    python scripts/synthetic_comparison.py --seeds 0 1 2 --out results.tsv
"""
import argparse
import logging

import numpy as np

from monomer.corpus import RelationSet
from monomer.evaluation import ModelConfig, compare_models, comparison_text
from monomer.sampling import RewireConfig, SplitSpec, sample_negatives, split_dataset
from monomer.synthetic import SyntheticSpec, generate_synthetic
from monomer.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n-items", type=int, default=SyntheticSpec.n_items)
    ap.add_argument("--positives", type=int, default=SyntheticSpec.n_positives)
    ap.add_argument("--lambda-grid", type=float, nargs="+", default=[0.0, 0.01, 0.1, 1.0, 10.0])
    ap.add_argument("--max-iters", type=int, default=TrainConfig.max_iterations)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="per-seed TSV of test errors")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    grid = tuple(args.lambda_grid)
    configs = [ModelConfig("wnn", lambda_grid=grid), ModelConfig("ct"),
               ModelConfig("lmt", 20, lambda_grid=grid), ModelConfig("monomer", 5, 3, lambda_grid=grid)]
    errors = {c.name: [] for c in configs}
    for seed in args.seeds:
        corpus, pos, _ = generate_synthetic(SyntheticSpec(n_items=args.n_items, n_positives=args.positives,
                                                          seed=seed))
        neg = sample_negatives(pos, corpus.category_codes, RewireConfig(seed=seed))
        train, val, test = split_dataset(RelationSet.concat([pos, neg]), SplitSpec(seed=seed))
        rows = compare_models(corpus, train, val, test, configs,
                              TrainConfig(max_iterations=args.max_iters, seed=seed, threads=args.threads))
        print(f"seed {seed}")
        print(comparison_text(rows))
        for row in rows:
            errors[row.name].append(row.result.error_rate)

    print("mean test error over seeds")
    for name, errs in errors.items():
        print(f"  {name:20s} {np.mean(errs):.4f} +- {np.std(errs):.4f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("model\t" + "\t".join(f"seed{s}" for s in args.seeds) + "\n")
            for name, errs in errors.items():
                f.write(name + "\t" + "\t".join(f"{e:.4f}" for e in errs) + "\n")


if __name__ == "__main__":
    main()

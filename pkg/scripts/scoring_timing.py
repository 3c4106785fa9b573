"""Time pair scoring as the feature dimension grows, Monomer against an LMT of equal width."""
import argparse
import time

import numpy as np

from monomer.models import LmtParams, MonomerParams, score_pairs


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[250, 500, 1000, 2000])
    ap.add_argument("--items", type=int, default=20_000)
    ap.add_argument("--pairs", type=int, default=100_000)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    K, N = args.k, args.n
    src = rng.integers(0, args.items, args.pairs)
    dst = rng.integers(0, args.items, args.pairs)
    print(f"{'F':>6} {'monomer s':>10} {'lmt s':>10} {'ratio':>6}")
    for F in args.dims:
        feats = rng.normal(size=(args.items, F)).astype(np.float32)
        mono = MonomerParams(rng.normal(size=(F, K)), rng.normal(size=(N, F, K)), rng.normal(size=(F, N)))
        lmt = LmtParams(rng.normal(size=(F, K * (N + 1))))
        tm = best_time(lambda: score_pairs(mono, feats, src, dst), args.repeats)
        tl = best_time(lambda: score_pairs(lmt, feats, src, dst), args.repeats)
        print(f"{F:>6} {tm:>10.3f} {tl:>10.3f} {tm / tl:>6.2f}")


if __name__ == "__main__":
    main()

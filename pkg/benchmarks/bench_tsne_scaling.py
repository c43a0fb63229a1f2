"""Barnes-Hut t-SNE wall time over growing N; fails when growth is clearly super-linear.

    python benchmarks/bench_tsne_scaling.py [--iterations 500] [--max-slope 1.5]
"""

import argparse
import sys
import time

import numpy as np

from gridmtd.learning import TsneParams, tsne_embed

SIZES = (500, 1000, 2000)


def mixture(n: int, rng: np.random.Generator, dim: int = 34, groups: int = 4) -> np.ndarray:
    centres = rng.normal(0.0, 8.0, size=(groups, dim))
    return centres[rng.integers(groups, size=n)] + rng.normal(size=(n, dim))


def time_embedding(n: int, iterations: int, method: str = "barnes_hut") -> float:
    rng = np.random.default_rng(n)
    data = mixture(n, rng)
    params = TsneParams(method=method, exaggeration_iters=iterations // 4, momentum_switch=iterations // 4)
    start = time.perf_counter()
    tsne_embed(data, 30.0, iterations, 200.0, rng, params=params)
    return time.perf_counter() - start


def growth_slope(sizes, seconds) -> float:
    """Least-squares slope of log(time) against log(N)."""
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--max-slope", type=float, default=1.5)
    ap.add_argument("--exact", action="store_true", help="also time the exact method for comparison")
    args = ap.parse_args()
    time_embedding(200, 5)  # compile kernels outside the timed runs
    methods = ["barnes_hut"] + (["exact"] if args.exact else [])
    slopes = {}
    for method in methods:
        seconds = [time_embedding(n, args.iterations, method) for n in SIZES]
        slopes[method] = growth_slope(SIZES, seconds)
        for n, s in zip(SIZES, seconds):
            print(f"{method:>10}  N={n:5d}  {s:7.2f} s")
        print(f"{method:>10}  log-log slope {slopes[method]:.2f}")
    ok = slopes["barnes_hut"] <= args.max_slope
    print("PASS" if ok else "FAIL", f"(limit {args.max_slope})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

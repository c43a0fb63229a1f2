"""Time the numba kernels against their numpy counterparts, and a full clustering run per backend.

    python benchmarks/bench_kernels.py [--points 1000] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from gridmtd import _accel, _kernels
from gridmtd._kernels import NUMPY_KERNELS, sq_distances

_END_TO_END = """
import time, numpy as np
from gridmtd.learning import tsne_embed, dbscan, estimate_eps
x = np.random.default_rng(0).normal(size=({n}, 34))
t = time.perf_counter()
emb = tsne_embed(x, 30.0, 300, 200.0, np.random.default_rng(1))
dbscan(emb.points, estimate_eps(emb.points, 5), 5)
print(time.perf_counter() - t)
"""


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up (numba compiles on first call)
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(n: int):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, 34))
    d2 = sq_distances(x)
    p, _ = NUMPY_KERNELS["calibrate_rows"](d2, 30.0, 1e-4, 200)
    p = (p + p.T) / (2 * n)
    y = rng.normal(size=(n, 2))
    grad = np.empty_like(y)
    pts = rng.normal(size=(n, 2))
    return {
        "calibrate_rows": lambda impl: impl(d2, 30.0, 1e-4, 200),
        "tsne_gradient": lambda impl: impl(y, p, 1.0, grad),
        "eps_graph": lambda impl: impl(pts, 0.2),
    }


def end_to_end(n: int, disable: bool) -> float:
    env = dict(os.environ)
    env.pop("GRIDMTD_DISABLE_NUMBA", None)
    if disable:
        env["GRIDMTD_DISABLE_NUMBA"] = "1"
    code = _END_TO_END.format(n=n)
    subprocess.run([sys.executable, "-c", code.replace("300", "2")], env=env, check=True, capture_output=True)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    return float(out.stdout)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba unavailable or disabled; nothing to compare")
        return 1
    print(f"{'kernel':<16}{'numba':>10}{'numpy':>10}{'speed-up':>10}")
    for name, call in kernel_cases(args.points).items():
        fast = best_of(lambda: call(getattr(_kernels, name)), args.repeat)
        slow = best_of(lambda: call(NUMPY_KERNELS[name]), args.repeat)
        print(f"{name:<16}{fast * 1e3:>8.2f}ms{slow * 1e3:>8.2f}ms{slow / fast:>9.1f}x")
    fast, slow = end_to_end(args.points, False), end_to_end(args.points, True)
    print(f"{'embed+cluster':<16}{fast:>9.2f}s{slow:>9.2f}s{slow / fast:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Time the numba kernels against their pure-numpy twins.

Runs the three hot paths (bag forward, fused backward, singleton
inference) on synthetic data sized like a refinement run and prints a
small table. The numba pass includes one untimed warmup call per kernel
so compilation is not billed to the measurement.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from milclean.kernels import get_backend
from milclean.models import make_attention_model


def _bench(fn, args, repeats):
    fn(*args)  # warmup (JIT compile / cache touch)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--feature-dim", type=int, default=8)
    ap.add_argument("--bag-size", type=int, default=10)
    ap.add_argument("--cells", type=int, default=4096)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    model = make_attention_model(args.feature_dim, seed=0)
    params = tuple(model.params())
    bag = rng.normal(size=(args.bag_size, args.feature_dim))
    cells = rng.normal(size=(args.cells, args.feature_dim))

    rows = []
    for name in ("numpy", "numba"):
        try:
            be = get_backend(name)
        except ImportError:
            print(f"{name}: not available, skipped")
            continue
        t_fwd = _bench(lambda *a: be.atten_forward(*a), (*params, bag), args.repeats)
        t_grad = _bench(lambda *a: be.atten_grad(*a),
                        (*params, bag, 1.0, 5.0, 3.0, 0.2), args.repeats)
        t_inf = _bench(lambda *a: be.atten_infer(*a), (*params, cells), args.repeats)
        rows.append((name, t_fwd, t_grad, t_inf))

    print(f"{'backend':<8} {'forward':>12} {'backward':>12} {'infer/%d' % args.cells:>14}")
    for name, t_fwd, t_grad, t_inf in rows:
        print(f"{name:<8} {t_fwd * 1e6:>10.1f}us {t_grad * 1e6:>10.1f}us {t_inf * 1e3:>12.2f}ms")
    if len(rows) == 2:
        print("speedup  " + "  ".join(
            f"{rows[0][i] / rows[1][i]:>10.1f}x" for i in (1, 2, 3)))


if __name__ == "__main__":
    main()

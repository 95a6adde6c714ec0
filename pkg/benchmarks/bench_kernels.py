"""Compare the compiled training kernels against the pure-NumPy fallback.

Times the three hot operations (loss, gradient, fused multi-step SGD) on
the shapes the simulator actually runs, plus one larger shape for
headroom. Usage::

    python benchmarks/bench_kernels.py [--repeat 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from clusterdl.kernels import _numpy_impl
from clusterdl.tinynet import Architecture, init_params

try:
    from clusterdl.kernels import _mlp_c
except ImportError:  # pragma: no cover - benchmark is informational
    _mlp_c = None

SHAPES = [
    # (label, layer dims, batch) — first two match the experiment configs
    ("desk 16-32-4 B8", (16, 32, 4), 8),
    ("settle 16-48-4 B24", (16, 48, 4), 24),
    ("large 64-128-10 B32", (64, 128, 10), 32),
]


def time_call(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - start) / repeat)
    return best


def bench(repeat: int) -> None:
    if _mlp_c is None:
        print("compiled extension not built; run `python setup.py build_ext "
              "--inplace` first")
        return
    header = f"{'shape':<22} {'op':<10} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, dims, batch in SHAPES:
        arch = Architecture(dims[0], tuple(dims[1:-1]), dims[-1])
        params = init_params(arch, seed=0)
        rng = np.random.default_rng(1)
        X = rng.normal(size=(batch, dims[0]))
        y = rng.integers(0, dims[-1], size=batch).astype(np.int64)
        ops = {
            "loss": lambda impl: impl.loss_value(params.values, dims, X, y),
            "grad": lambda impl: impl.loss_grad(params.values, dims, X, y),
            "sgd x10": lambda impl: impl.sgd_steps_inplace(
                params.values.copy(), dims, X, y, 0.05, 10
            ),
        }
        for op_name, op in ops.items():
            t_np = time_call(lambda: op(_numpy_impl), repeat)
            t_c = time_call(lambda: op(_mlp_c), repeat)
            print(f"{label:<22} {op_name:<10} {t_np * 1e6:>8.1f}us "
                  f"{t_c * 1e6:>8.1f}us {t_np / t_c:>7.1f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200,
                        help="inner iterations per timing sample")
    args = parser.parse_args()
    bench(args.repeat)


if __name__ == "__main__":
    main()

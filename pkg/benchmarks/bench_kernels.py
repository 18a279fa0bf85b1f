"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from subsurr import kernels
from subsurr.mesh import build_box
from subsurr.surrogates import hidden_dims, init_theta, tril_size


def cases():
    rng = np.random.default_rng(0)
    m = build_box(8, 1.0)
    X = m.nodes[m.elements]
    E, nu = np.full(len(X), 2e5), np.full(len(X), 0.3)
    k = 8
    dims = hidden_dims(k, tril_size(k))
    th = init_theta(dims, rng)
    Xin, T = rng.standard_normal((500, k)), rng.standard_normal((500, k))
    dims_d = hidden_dims(k, k)
    th_d = init_theta(dims_d, rng)
    g = rng.standard_normal(th.size)
    m1, v1 = np.zeros_like(th), np.zeros_like(th)
    return {
        f"hex_stiffness_batch ({len(X)} elements)": lambda b: b.hex_stiffness_batch(X, E, nu),
        f"mlp_loss_grad spsd head (batch 500, K*={k})":
            lambda b: b.mlp_loss_grad(th, dims, Xin, T, 1),
        f"mlp_loss_grad direct head (batch 60, K={k})":
            lambda b: b.mlp_loss_grad(th_d, dims_d, Xin[:60], T[:60], 0),
        f"adam_step ({th.size} parameters)":
            lambda b: b.adam_step(th.copy(), g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "compiled" not in kernels.BACKENDS:
        print("compiled extension not available; timing the Python backend only")
    print(f"{'kernel':<48}" + "".join(f"{b:>14}" for b in sorted(kernels.BACKENDS)) + "   speedup")
    for name, fn in cases().items():
        best = {}
        for b in sorted(kernels.BACKENDS):
            mod = kernels.BACKENDS[b]
            n = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-7)))
            best[b] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n
        row = f"{name:<48}" + "".join(f"{best[b] * 1e6:>12.1f}us" for b in sorted(best))
        if len(best) == 2:
            row += f"   {best['python'] / best['compiled']:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()

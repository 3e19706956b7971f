"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--arch 16,32,32,4] [--batch 16] [--repeat 20]

Both backends run on identical inputs; results are checked for agreement
before any timing is reported.
"""
import argparse
import time

import numpy as np

from glai import _kernels
from glai.mlp import new_mlp, trace_batch
from glai.paths import PathTable


def _time(fn, repeat):
    fn()  # warm-up (JIT compile on the first numba call)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(arch, batch, seed):
    model = new_mlp(arch, seed)
    table = PathTable.full(arch)
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.standard_normal((batch, arch[0])))
    _, acts, _ = trace_batch(model, X)
    acts = _kernels.pack_acts(acts, batch)
    cols, origin, out = table.selector_arrays()
    w = rng.standard_normal(len(table))
    g = np.ascontiguousarray(rng.standard_normal((batch, arch[-1])))
    params = _kernels.pack_params(model.weights, model.biases)
    return {
        "path_weights": lambda impl: impl.path_weights(*params, table.nodes, table.start),
        "contributions": lambda impl: impl.contributions(X, acts, cols, origin),
        "outputs": lambda impl: impl.outputs(X, acts, cols, origin, out, w, arch[-1]),
        "abs_mean": lambda impl: impl.abs_mean(X, acts, cols, origin),
        "estimator_grad": lambda impl: impl.estimator_grad(X, acts, cols, origin, out, g),
    }, len(table)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", default="16,32,32,4")
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    arch = tuple(int(v) for v in args.arch.split(","))
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not installed")

    kernels, n_paths = cases(arch, args.batch, args.seed)
    print(f"arch {arch}, {n_paths} paths, batch {args.batch}, best of {args.repeat}")
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'ratio':>8}")
    for name, run in kernels.items():
        np.testing.assert_allclose(run(_kernels.numba_impl), run(_kernels.numpy_impl), rtol=1e-12, atol=1e-12)
        t_np = _time(lambda: run(_kernels.numpy_impl), args.repeat)
        t_nb = _time(lambda: run(_kernels.numba_impl), args.repeat)
        print(f"{name:<16}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.2f}")


if __name__ == "__main__":
    main()

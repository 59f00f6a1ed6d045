"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --repeat 5
"""
import argparse
import timeit

import numpy as np

from corehts.kernels import backends


def cases(rng: np.random.Generator, n: int, k: int, m: int, d: int, samples: int):
    X = rng.standard_normal((n, k, m))
    U = rng.standard_normal((d, m)) * 0.1
    V = rng.standard_normal((d, d)) * 0.1
    c = rng.standard_normal(d) * 0.1
    x = rng.standard_normal((n, d))
    S = rng.standard_normal((samples, n * m))
    y = rng.standard_normal(n * m)

    def make(impl):
        H = impl.rnn_forward(X, U, V, c)
        dh = rng.standard_normal(H[-1].shape)
        _, _, _, inv_std = impl.batchnorm_forward(x, 1e-5)
        xhat = (x - x.mean(axis=0)) * inv_std
        return {
            "rnn_forward": lambda: impl.rnn_forward(X, U, V, c),
            "rnn_backward": lambda: impl.rnn_backward(X, H, U, V, dh),
            "batchnorm_forward": lambda: impl.batchnorm_forward(x, 1e-5),
            "batchnorm_backward": lambda: impl.batchnorm_backward(dh, xhat, inv_std),
            "crps_energy": lambda: impl.crps_energy(S, y),
        }

    return make


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=236, help="windows per batch")
    parser.add_argument("--lag", type=int, default=5)
    parser.add_argument("--series", type=int, default=53)
    parser.add_argument("--hidden", type=int, default=128)
    parser.add_argument("--samples", type=int, default=100, help="samples per cell for CRPS")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args(argv)

    impls = backends()
    if "cython" not in impls:
        print("compiled extension not built; timing the numpy fallback only")
    make = cases(np.random.default_rng(0), args.batch, args.lag, args.series, args.hidden, args.samples)
    timings = {}
    for name, impl in impls.items():
        for kernel, fn in make(impl).items():
            best = min(timeit.repeat(fn, repeat=args.repeat, number=args.number)) / args.number
            timings[(kernel, name)] = best

    print(f"{'kernel':<20} " + " ".join(f"{n:>12}" for n in impls) + ("  speedup" if len(impls) > 1 else ""))
    for kernel in make(impls["python"]):
        row = " ".join(f"{timings[(kernel, n)] * 1e6:>10.1f}us" for n in impls)
        if "cython" in impls:
            row += f"  {timings[(kernel, 'python')] / timings[(kernel, 'cython')]:>6.2f}x"
        print(f"{kernel:<20} {row}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

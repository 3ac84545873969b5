"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on both backends with identical inputs; outputs are checked
for bit equality before timing.
"""
import argparse
import sys
import timeit

import numpy as np

from volterra_bsvie import _kernels


def _cases(rng):
    v = rng.normal(size=(101, 241))
    vxx = rng.normal(size=v.shape)
    gen = rng.normal(size=v.shape)
    half_a = rng.uniform(0.1, 0.5, size=v.shape[1])
    return {
        "counter_uniforms (1e4 x 200)": lambda k: k.counter_uniforms(7, 0, 10_000, 200),
        "fd_derivatives (101 x 241)": lambda k: k.fd_derivatives(v, 20.0, 10.0, 400.0),
        "explicit_step (101 x 241)": lambda k: k.explicit_step(v, vxx, gen, half_a, 1e-3),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=10)
    args = p.parse_args(argv)
    compiled, python = _kernels.compiled_backend, _kernels.python_backend
    if compiled is None:
        print("compiled extension not available; build with 'pip install -e . --no-build-isolation'")
        return 1
    print(f"{'kernel':<32}{'python ms':>12}{'cython ms':>12}{'speedup':>10}  identical")
    for name, call in _cases(np.random.default_rng(0)).items():
        ident = _same(call(python), call(compiled))
        tp = min(timeit.repeat(lambda: call(python), number=args.number, repeat=args.repeat)) / args.number
        tc = min(timeit.repeat(lambda: call(compiled), number=args.number, repeat=args.repeat)) / args.number
        print(f"{name:<32}{tp * 1e3:>12.3f}{tc * 1e3:>12.3f}{tp / tc:>9.1f}x  {ident}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

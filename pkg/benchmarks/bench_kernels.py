"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and shape with the best-of-N wall time for each
backend and the speedup.  Also checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from fctl import _backend

SHAPES = [(8, 16, 16), (16, 32, 32), (64, 64, 64)]


def cases(k, shape, rng):
    f = rng.normal(size=shape)
    g = rng.normal(size=shape)
    yield "sobel", lambda: k.sobel(f)
    yield "sobel_adjoint", lambda: k.sobel_adjoint(f, g)
    for r in (1, 4, 8):
        yield f"consistency r={r}", lambda r=r: k.consistency(f, r)
    for r in (1, 4):
        yield f"consistency_adjoint r={r}", lambda r=r: k.consistency_adjoint(f, r, g)


def best_time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _backend.compiled_kernels is None:
        print("compiled kernels not built; only the numpy backend is available")
        return
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    print(f"{'kernel':<26} {'shape':<14} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for shape in SHAPES:
        rng = np.random.default_rng(0)
        py_cases = dict(cases(py, shape, rng))
        rng = np.random.default_rng(0)
        for name, fn in cases(cy, shape, rng):
            ref, got = py_cases[name](), fn()
            ref = ref if isinstance(ref, tuple) else (ref,)
            got = got if isinstance(got, tuple) else (got,)
            assert all(np.allclose(a, b, rtol=0, atol=1e-10) for a, b in zip(ref, got)), name
            t_py = best_time(py_cases[name], args.repeat)
            t_cy = best_time(fn, args.repeat)
            print(f"{name:<26} {str(shape):<14} {1e3 * t_py:>10.2f} {1e3 * t_cy:>10.2f} {t_py / t_cy:>7.1f}x")


if __name__ == "__main__":
    main()

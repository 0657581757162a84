"""Time the compiled kernels against the pure-Python reference.

    python3 benchmarks/bench_kernels.py [--size 64] [--repeats 5]
"""
import argparse
import timeit

import numpy as np

from pointvsod import _kernels_py

try:
    from pointvsod import _kernels
except ImportError:
    _kernels = None


def cases(size, rng):
    img = rng.random((size, size, 3))
    img[size // 4:3 * size // 4, size // 4:3 * size // 4] = 0.6      # one large flat region
    c = size // 2
    yield "flood_region", lambda m: m.flood_region(img, c, c, float(size * size), 0.1)

    frames = rng.random((2, size, size, 3))
    pred = rng.random((2, size, size))
    yield "gcrf_loss_grad k=5", lambda m: m.gcrf_loss_grad(pred, frames, 5, 6.0, 0.1)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}  match")
    for name, call in cases(args.size, rng):
        py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeats)) * 1e3
        cy = min(timeit.repeat(lambda: call(_kernels), number=1, repeat=args.repeats)) * 1e3
        ok = same(call(_kernels_py), call(_kernels))
        print(f"{name:<20}{py:>12.2f}{cy:>12.3f}{py / cy:>9.0f}x  {'yes' if ok else 'NO'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

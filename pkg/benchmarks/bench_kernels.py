"""Compare the compiled kernel backend against the pure-numpy reference.

Run after building the extension:

    python benchmarks/bench_kernels.py

Reports per-kernel wall times and the speedup, and verifies that both
backends produce bitwise-identical outputs on the benchmark inputs.
"""

import time

import numpy as np

from lfdnet.kernels import reference

try:
    from lfdnet.kernels import _fastcore as compiled
except ImportError as exc:
    raise SystemExit(f"compiled backend unavailable: {exc}")


def timeit(fn, *args, repeats=5):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def check(name, a, b):
    if isinstance(a, tuple):
        ok = all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))
    else:
        ok = np.array_equal(np.asarray(a), np.asarray(b))
    if not ok:
        raise SystemExit(f"{name}: backends disagree")


def row(name, t_py, t_c):
    print(f"{name:<22} python {t_py * 1e3:8.2f} ms   compiled {t_c * 1e3:8.2f} ms   x{t_py / t_c:6.1f}")


def main():
    rng = np.random.Generator(np.random.PCG64(0))

    x = rng.standard_normal((8, 16, 64, 64)).astype(np.float32)
    t_py, cols_py = timeit(reference.im2col, x, 3, 3, 1, 1)
    t_c, cols_c = timeit(compiled.im2col, x, 3, 3, 1, 1)
    check("im2col", cols_py, cols_c)
    row("im2col 3x3", t_py, t_c)

    t_py, out_py = timeit(reference.col2im, cols_py, 8, 16, 64, 64, 3, 3, 1, 1)
    t_c, out_c = timeit(compiled.col2im, cols_c, 8, 16, 64, 64, 3, 3, 1, 1)
    check("col2im", out_py, out_c)
    row("col2im 3x3", t_py, t_c)

    t_py, pool_py = timeit(reference.maxpool2x2, x)
    t_c, pool_c = timeit(compiled.maxpool2x2, x)
    check("maxpool2x2", pool_py, pool_c)
    row("maxpool2x2", t_py, t_c)

    g = rng.standard_normal(pool_py[0].shape).astype(np.float32)
    t_py, back_py = timeit(reference.maxpool2x2_backward, g, pool_py[1])
    t_c, back_c = timeit(compiled.maxpool2x2_backward, g, pool_c[1])
    check("maxpool2x2_backward", back_py, back_c)
    row("maxpool2x2_backward", t_py, t_c)

    tris = rng.uniform(0, 256, size=(2000, 3, 2))
    t_py, img_py = timeit(reference.fill_triangles, tris, 256, 256)
    t_c, img_c = timeit(compiled.fill_triangles, tris, 256, 256)
    check("fill_triangles", img_py, img_c)
    row("fill_triangles", t_py, t_c)

    n = 200_000
    xs = np.sort(rng.standard_normal(n))
    gs = rng.standard_normal(n)
    hs = rng.uniform(0.1, 1.0, size=n)
    gt, ht = float(gs.sum()), float(hs.sum())
    t_py, split_py = timeit(reference.split_scan, xs, gs, hs, gt, ht, 1.0, 0.0, 1.0)
    t_c, split_c = timeit(compiled.split_scan, xs, gs, hs, gt, ht, 1.0, 0.0, 1.0)
    check("split_scan", split_py, split_c)
    row("split_scan", t_py, t_c)

    print("all outputs bitwise identical across backends")


if __name__ == "__main__":
    main()

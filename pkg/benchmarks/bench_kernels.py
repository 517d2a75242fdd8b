"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes match a training step of the reduced network (batch 32, 8 channels,
width 100) and a MUSIC batch (L = 20).
"""
import argparse
import time

import numpy as np

from linespec import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    x = rng.normal(size=(32, 8, 100)).astype(np.float32)
    w = rng.normal(size=(8, 8, 3)).astype(np.float32)
    b = np.zeros(8, np.float32)
    a = rng.normal(size=(64, 20, 20)) + 1j * rng.normal(size=(64, 20, 20))
    herm = a + np.conj(np.swapaxes(a, 1, 2))
    spec = rng.normal(size=1000)
    p = rng.normal(size=800_000).astype(np.float32)
    g = rng.normal(size=p.size).astype(np.float32)
    return {
        "circconv_forward": lambda m: m.circconv_forward(x, w, b),
        "circconv_backward": lambda m: m.circconv_backward(x, w, x),
        "jacobi_eigh_batch (64 x 20x20)": lambda m: m.jacobi_eigh_batch(herm),
        "plateau_peaks (g=1000)": lambda m: m.plateau_peaks(spec),
        "adam_update (800k)": lambda m: m.adam_update(p, g, np.zeros_like(p), np.zeros_like(p),
                                                      1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled extension not built; only the numpy fallback is available")
    mods = {n: kernels.load_backend(n) for n in names}
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names) + "     speedup")
    for label, fn in cases(rng).items():
        t = {n: best_of(lambda: fn(m), args.repeat) for n, m in mods.items()}
        row = f"{label:34s}" + "".join(f"{1e3 * t[n]:10.3f}ms" for n in names)
        if "cython" in t:
            row += f"  {t['python'] / t['cython']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()

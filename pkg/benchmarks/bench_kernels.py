"""Time the compiled LSTM recurrence against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--steps 2000] [--hidden 32 64 256] [--repeat 3]

Prints one row per (dtype, hidden size) with the best-of-N wall time of a
forward plus backward pass for each backend and the speedup.
"""

import argparse
import time

import numpy as np

from scriptgauge import kernels


def run(module, xproj, w_rec, dhidden):
    T, H = dhidden.shape
    gates = np.empty((T, 4 * H), dtype=xproj.dtype)
    cells = np.empty((T, H), dtype=xproj.dtype)
    hidden = np.empty((T, H), dtype=xproj.dtype)
    dpre = np.empty((T, 4 * H), dtype=xproj.dtype)
    module.lstm_forward(xproj, w_rec, gates, cells, hidden)
    module.lstm_backward(w_rec, gates, cells, dhidden, dpre)
    return hidden, dpre


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=2000, help="sequence length T")
    parser.add_argument("--hidden", type=int, nargs="+", default=[32, 64, 256])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the python backend is available")
    print(f"T = {args.steps}, forward + backward, best of {args.repeat}")
    print(f"{'dtype':8} {'H':>5} " + " ".join(f"{name + ' (s)':>12}" for name in backends) + f" {'speedup':>8}")
    rng = np.random.default_rng(0)
    for dtype in (np.float32, np.float64):
        for H in args.hidden:
            xproj = rng.normal(size=(args.steps, 4 * H)).astype(dtype)
            w_rec = (rng.normal(size=(H, 4 * H)) / np.sqrt(H)).astype(dtype)
            dhidden = rng.normal(size=(args.steps, H)).astype(dtype)
            times = {name: best_time(lambda m=m: run(m, xproj, w_rec, dhidden), args.repeat)
                     for name, m in backends.items()}
            if "cython" in backends:
                ref, fast = run(backends["python"], xproj, w_rec, dhidden), run(backends["cython"], xproj, w_rec,
                                                                                 dhidden)
                tol = 1e-4 if dtype == np.float32 else 1e-10
                assert all(np.allclose(a, b, rtol=tol, atol=tol) for a, b in zip(ref, fast)), "backends disagree"
            speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
            cols = " ".join(f"{t:12.4f}" for t in times.values())
            print(f"{np.dtype(dtype).name:8} {H:5d} {cols} {speedup:7.1f}x")


if __name__ == "__main__":
    main()

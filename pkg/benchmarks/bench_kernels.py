"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints wall-clock time per call for each backend and the speedup. Results
of both backends are also checked for agreement.
"""
import argparse
import time

import numpy as np

from nextevent import _backend, lstm, nncore


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def window_case(m, T, B, v, peep):
    rng = nncore.make_rng(0)
    params = lstm.init_params(rng, v, v, m, peepholes=peep)
    ids = rng.integers(0, v, (T, B))
    tg = rng.integers(0, v, (T, B))
    masks = [nncore.dropout_mask(rng, (T, B, m), 0.2) for _ in range(3)]

    def run(k):
        _, _, acts = lstm.forward_unrolled(params, None, ids, masks, kernels=k)
        return lstm.backward_unrolled(params, acts, tg, kernels=k)

    return run


def osa_case(n_pairs=20000, length=12):
    rng = np.random.default_rng(0)
    pairs = [
        (rng.integers(0, 5, rng.integers(0, length)).astype(np.int64), rng.integers(0, 5, rng.integers(0, length)).astype(np.int64))
        for _ in range(n_pairs)
    ]

    def run(k):
        return [k.osa_distance(a, b) for a, b in pairs]

    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    try:
        cy = _backend.get("cython")
    except ImportError:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return
    py = _backend.get("python")
    cases = {
        "train window m=125 T=20 B=20": window_case(125, 20, 20, 40, False),
        "train window m=32 T=10 B=20": window_case(32, 10, 20, 8, False),
        "train window m=32 T=10 B=20 peephole": window_case(32, 10, 20, 8, True),
        "eval stream m=32 T=256 B=1": window_case(32, 256, 1, 8, False),
        "OSA distance x20000 pairs": osa_case(),
    }
    print(f"{'case':42s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, run in cases.items():
        a, b = run(py), run(cy)
        if isinstance(a, list):
            assert a == b
        else:
            assert abs(a[0] - b[0]) < 1e-10
            for x, y in zip(a[1].arrays(), b[1].arrays()):
                assert np.allclose(x, y, rtol=1e-9, atol=1e-12)
        tp = timeit(lambda: run(py), args.repeat)
        tc = timeit(lambda: run(cy), args.repeat)
        print(f"{name:42s} {tp * 1e3:11.2f} {tc * 1e3:12.2f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()

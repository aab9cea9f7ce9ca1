"""Times the compiled kernels against the pure-Python fallback.

Both backends are imported directly (bypassing the env-var selection in
bytepatch.kernels), run on identical inputs, checked for identical
results, then timed. Usage:

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from bytepatch import _kernels_py
from bytepatch import kernels

try:
    from bytepatch import _kernels as _kernels_cy
except ImportError:
    _kernels_cy = None

PAIR_SHIFT = _kernels_py.PAIR_SHIFT


def make_corpus(rng, n_words=4000):
    words = [rng.integers(0, 300, size=rng.integers(2, 13)).astype(np.int32)
             for _ in range(n_words)]
    flat = np.concatenate(words)
    starts = np.zeros(len(words) + 1, dtype=np.int64)
    np.cumsum([len(w) for w in words], out=starts[1:])
    counts = rng.integers(1, 50, size=len(words)).astype(np.int64)
    return flat, starts, counts


def build_cases(seed=0):
    rng = np.random.default_rng(seed)
    flat, starts, counts = make_corpus(rng)

    pair_counts = _kernels_py.count_pairs(flat, starts, counts)
    top_pair = max(pair_counts, key=pair_counts.get)
    a, b = top_pair >> PAIR_SHIFT, top_pair & ((1 << PAIR_SHIFT) - 1)

    ranks = {}
    for r in range(200):
        key = (int(rng.integers(0, 256)) << PAIR_SHIFT) \
            | int(rng.integers(0, 256))
        ranks.setdefault(key, len(ranks))
    words = [list(rng.integers(0, 256, size=rng.integers(2, 24)))
             for _ in range(2000)]

    entropies = rng.uniform(0.0, 8.0, size=1_000_000)

    return [
        ("count_pairs", lambda k: k.count_pairs(flat, starts, counts)),
        ("apply_merge", lambda k: k.apply_merge(flat, starts,
                                                int(a), int(b), 300)),
        ("merge_word", lambda k: [k.merge_word(w, ranks) for w in words]),
        ("entropy_boundaries",
         lambda k: k.entropy_boundaries(entropies, 4.0, 64)),
    ]


def same(x, y) -> bool:
    if isinstance(x, tuple):
        return all(same(a, b) for a, b in zip(x, y))
    if isinstance(x, np.ndarray):
        return bool(np.array_equal(x, np.asarray(y)))
    if isinstance(x, list) and x and isinstance(x[0], (list, np.ndarray)):
        return all(same(a, b) for a, b in zip(x, y))
    return x == y


def best_of(fn, repeats) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    print(f"selected backend at import: {kernels.BACKEND}")
    if _kernels_cy is None:
        print("compiled extension not built; timing the fallback only")

    rows = []
    for name, call in build_cases():
        py_out = call(_kernels_py)
        py_t = best_of(lambda: call(_kernels_py), args.repeats)
        if _kernels_cy is not None:
            cy_out = call(_kernels_cy)
            assert same(py_out, cy_out), f"{name}: backends disagree"
            cy_t = best_of(lambda: call(_kernels_cy), args.repeats)
            rows.append((name, py_t, cy_t, py_t / cy_t))
        else:
            rows.append((name, py_t, None, None))

    header = f"{'kernel':<20} {'python':>10} {'cython':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, py_t, cy_t, ratio in rows:
        cy = f"{cy_t * 1e3:8.2f}ms" if cy_t is not None else "      --"
        sp = f"{ratio:7.1f}x" if ratio is not None else "      --"
        print(f"{name:<20} {py_t * 1e3:8.2f}ms {cy} {sp}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

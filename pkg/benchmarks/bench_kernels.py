"""Time the numba kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is warmed up
once (JIT compile) and then timed with ``timeit``; outputs of the two paths
are checked for equality before timing.
"""

import argparse
import json
import timeit

import numpy as np

from densechain import _accel


def _cases(n: int, d: int, batch: int, k: int, hash_dim: int, nnz: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    matrix = rng.normal(size=(n, d))
    queries = rng.normal(size=(batch, d))
    scores = queries @ matrix.T
    rank = rng.permutation(n).astype(np.int64)
    weights = rng.normal(size=(d, hash_dim))
    idx = np.sort(rng.choice(hash_dim, size=nnz, replace=False)).astype(np.int64)
    val = rng.normal(size=nnz)
    vec = rng.normal(size=d)
    return {
        "dot_rows": ((matrix, queries), {}),
        "topk_rows": ((scores, rank, k), {}),
        "project_sparse": ((weights, idx, val), {}),
        "add_outer_sparse": ((np.zeros((d, hash_dim)), 0.5, vec, idx, val), {}),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--passages", type=int, default=1000)
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--batch", type=int, default=10)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--hash-dim", type=int, default=32768)
    ap.add_argument("--nnz", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = ap.parse_args()

    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or DENSECHAIN_NO_NUMBA is set); nothing to compare")

    cases = _cases(args.passages, args.dim, args.batch, args.k, args.hash_dim, args.nnz, args.seed)
    results = {}
    for name, (fargs, _) in cases.items():
        fast = getattr(_accel, f"{name}_numba")
        slow = getattr(_accel, f"{name}_numpy")
        if name == "add_outer_sparse":
            g1, g2 = fargs[0].copy(), fargs[0].copy()
            fast(g1, *fargs[1:])
            slow(g2, *fargs[1:])
            assert np.array_equal(g1, g2), name
        else:
            assert np.array_equal(fast(*fargs), slow(*fargs)), name
        timing = {}
        for label, fn in (("numba", fast), ("numpy", slow)):
            t = timeit.repeat(lambda: fn(*fargs), repeat=args.repeat, number=args.number)
            timing[label] = min(t) / args.number
        timing["speedup"] = timing["numpy"] / timing["numba"]
        results[name] = timing

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"{'kernel':<18}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, t in results.items():
        print(f"{name:<18}{t['numba'] * 1e6:>12.1f}{t['numpy'] * 1e6:>12.1f}{t['speedup']:>9.2f}x")


if __name__ == "__main__":
    main()

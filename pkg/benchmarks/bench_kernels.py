"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeat 3]

Prints one TSV row per kernel: seconds for each backend and the speedup.
Both backends receive identical inputs; outputs are checked for agreement.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from recnet._core import get_backend
from recnet.annindex import HnswIndex


def _best(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_pvdbow(be, rng_seed: int, scale: float):
    rng = np.random.default_rng(rng_seed)
    n_docs, vocab, dim, neg = 200, 500, 64, 5
    pairs = int(20000 * scale)
    docs0 = ((rng.random((n_docs, dim)) - 0.5) / dim).astype(np.float32)
    pd = rng.integers(0, n_docs, pairs).astype(np.int32)
    pw = rng.integers(0, vocab, pairs).astype(np.int32)
    negs = rng.integers(0, vocab, (pairs, neg)).astype(np.int32)
    lrs = np.linspace(0.025, 1e-4, pairs).astype(np.float32)

    def run():
        d = docs0.copy()
        o = np.zeros((vocab, dim), dtype=np.float32)
        be.pvdbow_epoch(d, o, pd, pw, negs, lrs)
        return d
    return run


def _hnsw_state(n: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim)).astype(np.float32)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    idx = HnswIndex(M=8, ef_construction=50, seed=seed)
    idx._allocate(idx._draw_levels(n))
    return x, idx


def bench_hnsw_build(be, seed: int, scale: float):
    x, proto = _hnsw_state(int(2000 * scale), 32, seed)

    def run():
        links0, counts0 = proto.links0.copy(), proto.counts0.copy()
        links_up, counts_up = proto.links_up.copy(), proto.counts_up.copy()
        be.hnsw_build(x, proto.levels, links0, counts0, proto.up_offset, links_up, counts_up,
                      proto.ef_construction)
        return links0
    return run


def bench_hnsw_search(be, seed: int, scale: float):
    x, idx = _hnsw_state(int(2000 * scale), 32, seed)
    entry = get_backend("cython" if _has_cython() else "python").hnsw_build(
        x, idx.levels, idx.links0, idx.counts0, idx.up_offset, idx.links_up, idx.counts_up, 50)
    q = np.random.default_rng(seed + 1).normal(size=(int(200 * scale), 32)).astype(np.float32)

    def run():
        return [be.hnsw_search(x, idx.levels, idx.links0, idx.counts0, idx.up_offset,
                               idx.links_up, idx.counts_up, int(entry), qi, 10, 64)[0]
                for qi in q]
    return run


def bench_hamming(be, seed: int, scale: float):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 2**63, size=(int(200000 * scale), 4), dtype=np.uint64)
    q = rng.integers(0, 2**63, size=4, dtype=np.uint64)
    return lambda: be.hamming_distances(codes, q)


def _has_cython() -> bool:
    try:
        get_backend("cython")
        return True
    except ImportError:
        return False


def _same(a, b) -> bool:
    if isinstance(a, list):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-4, atol=1e-6)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _has_cython():
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")
    kernels = [("pvdbow_epoch", bench_pvdbow), ("hnsw_build", bench_hnsw_build),
               ("hnsw_search", bench_hnsw_search), ("hamming_distances", bench_hamming)]
    print("kernel\tcython_s\tpython_s\tspeedup\tagree")
    for name, make in kernels:
        tc, oc = _best(make(get_backend("cython"), args.seed, args.scale), args.repeat)
        tp, op = _best(make(get_backend("python"), args.seed, args.scale), args.repeat)
        print(f"{name}\t{tc:.5f}\t{tp:.5f}\t{tp / tc:.1f}x\t{_same(oc, op)}")


if __name__ == "__main__":
    main()

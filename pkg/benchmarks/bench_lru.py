"""Compare the compiled LRU kernel against the pure-Python fallback.

    python3 benchmarks/bench_lru.py [--ops N] [--sets S] [--ways W]
"""

import argparse
import time

import numpy as np

from cargosim import _lru_py

try:
    from cargosim._lru import LRUCache as CyLRU
except ImportError:
    CyLRU = None


def run(cls, blocks, sets, ways):
    c = cls(sets, ways)
    t0 = time.perf_counter()
    hits = 0
    for b in blocks:
        if c.lookup(b):
            hits += 1
        else:
            c.insert(b)
    return time.perf_counter() - t0, hits


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ops", type=int, default=500_000)
    ap.add_argument("--sets", type=int, default=64)
    ap.add_argument("--ways", type=int, default=8)
    ap.add_argument("--footprint", type=int, default=2048, help="distinct blocks")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    # skewed reuse so both hit and miss paths are exercised
    blocks = (rng.zipf(1.3, args.ops) % args.footprint).tolist()

    py_t, py_hits = run(_lru_py.LRUCache, blocks, args.sets, args.ways)
    print(f"python : {py_t:8.3f} s  {args.ops / py_t / 1e6:7.2f} Mops/s  hits={py_hits}")
    if CyLRU is None:
        print("cython : not built (pip install -e . --no-build-isolation)")
        return
    cy_t, cy_hits = run(CyLRU, blocks, args.sets, args.ways)
    print(f"cython : {cy_t:8.3f} s  {args.ops / cy_t / 1e6:7.2f} Mops/s  hits={cy_hits}")
    assert cy_hits == py_hits, "backends disagree"
    print(f"speedup: {py_t / cy_t:.1f}x")


if __name__ == "__main__":
    main()

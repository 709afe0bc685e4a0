"""Time the compiled kernels against the NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--size N] [--repeat R] [--json PATH]

Each kernel is run on identical inputs in both backends; outputs are checked
for agreement before timing.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from biphoton import _pycore

try:
    from biphoton import _core
except ImportError:
    _core = None


def _inputs(n: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    # 1 MHz tag streams, about 2 ns jitter-free coincidences mixed in
    span = n * 1_000_000
    a = np.sort(rng.integers(0, span, n))
    b = np.sort(np.concatenate((rng.integers(0, span, n // 2), a[: n // 2] + rng.integers(0, 2_000, n // 2))))
    dead = np.sort(rng.uniform(0, span, n))
    noise = rng.normal(size=n) + 1j * rng.normal(size=n)
    return {
        "correlate_counts": ((a, b, 84, 595, 0), {}),
        "dead_time_mask": ((dead, 1e5), {}),
        "ar1_complex": ((0j, 0.8, noise), {}),
    }


def _agree(name: str, x, y) -> bool:
    if name == "ar1_complex":
        return bool(np.allclose(x, y, rtol=1e-10, atol=1e-10))
    return bool(np.array_equal(x, y))


def run(size: int, repeat: int) -> list[dict]:
    rows = []
    for name, (args, kw) in _inputs(size).items():
        ref = getattr(_pycore, name)
        row = {"kernel": name, "size": size}
        row["python_s"] = min(timeit.repeat(lambda: ref(*args, **kw), number=1, repeat=repeat))
        if _core is not None:
            fast = getattr(_core, name)
            row["agree"] = _agree(name, fast(*args, **kw), ref(*args, **kw))
            row["cython_s"] = min(timeit.repeat(lambda: fast(*args, **kw), number=1, repeat=repeat))
            row["speedup"] = row["python_s"] / row["cython_s"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--size", type=int, default=1_000_000, help="events per kernel input")
    ap.add_argument("--repeat", type=int, default=3, help="timing repeats (best is kept)")
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    rows = run(args.size, args.repeat)
    if _core is None:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)
    print(f"{'kernel':<18}{'size':>10}{'python [s]':>12}{'cython [s]':>12}{'speedup':>9}  agree")
    for r in rows:
        print(f"{r['kernel']:<18}{r['size']:>10}{r['python_s']:>12.4f}"
              f"{r.get('cython_s', float('nan')):>12.4f}{r.get('speedup', float('nan')):>9.1f}  {r.get('agree', '-')}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r.get("agree", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())

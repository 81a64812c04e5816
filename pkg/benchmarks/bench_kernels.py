"""Compare the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json]

Each row is the best of ``--repeat`` timings; inputs are fresh random data
so branch predictors cannot memorize them.
"""

import argparse
import json
import time

import numpy as np

from nqkv import _backend, _pykernels
from nqkv.codec import get_codebook


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    cb = get_codebook("nf4")
    table, zi = cb.table, cb.zero_index
    big = rng.standard_normal((4096, 512))
    tokens = [rng.standard_normal((2, 512)) for _ in range(256)]
    small_b = 64
    idx = rng.integers(0, 16, size=(4096, 512), dtype=np.uint8)

    def setup(k):
        scales, ind = k.quantize_rows(big, 256, table, zi)
        return scales, k.pack_nibbles(ind, zi)

    q = rng.standard_normal(512)
    keys = rng.standard_normal((352, 512))
    vals = rng.standard_normal((352, 512))

    return {
        "quantize 4096x512 (B=256)": lambda k: k.quantize_rows(big, 256, table, zi),
        "quantize 4096x512 (B=64)": lambda k: k.quantize_rows(big, small_b, table, zi),
        "quantize 256 single tokens": lambda k: [k.quantize_rows(t, 256, table, zi) for t in tokens],
        "pack 4096x512": lambda k: k.pack_nibbles(idx, zi),
        "dequantize 4096x512": (setup, lambda k, s: k.dequantize_rows(s[1], s[0], 512, 256, table)),
        "attend 338 of 352 tokens, 8 heads": lambda k: k.attend(q, keys, vals, 338, 8),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    backends = {"python": _pykernels}
    if _backend.compiled is not None:
        backends["cython"] = _backend.compiled
    rows = []
    for name, case in cases(np.random.default_rng(args.seed)).items():
        row = {"case": name}
        for label, k in backends.items():
            if isinstance(case, tuple):
                state = case[0](k)
                row[label] = best_of(lambda: case[1](k, state), args.repeat)
            else:
                row[label] = best_of(lambda: case(k), args.repeat)
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
        rows.append(row)

    if args.json:
        print(json.dumps({"backends": list(backends), "repeat": args.repeat, "results": rows}, indent=2))
        return
    print(f"{'case':<36} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for r in rows:
        cy = f"{1e3 * r['cython']:>10.3f}" if "cython" in r else f"{'-':>10}"
        sp = f"{r['speedup']:>7.1f}x" if "speedup" in r else f"{'-':>8}"
        print(f"{r['case']:<36} {1e3 * r['python']:>10.3f} {cy} {sp}")


if __name__ == "__main__":
    main()

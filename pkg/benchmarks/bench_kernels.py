"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each kernel runs on identical inputs in both backends; outputs are checked
for equality and the best-of-``repeat`` wall time is reported.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mlrq import _fallback
from mlrq.core import Codebook, nearest_sq

try:
    from mlrq import _kernels
except ImportError:
    _kernels = None


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(quick: bool):
    rng = np.random.default_rng(0)
    m = 2_000 if quick else 20_000
    cum = np.concatenate([[0], np.cumsum(rng.integers(1, 500, size=256))]).astype(np.int64)
    sym = rng.integers(0, 256, size=m * 5).astype(np.int64)
    C = Codebook(rng.standard_normal((256, 64)))
    X = rng.standard_normal((m, 64))
    blob = rng.integers(0, 256, size=m * 200, dtype=np.uint8).tobytes()
    encoded = {}

    def enc(impl):
        encoded[impl.name] = impl.range_encode(sym, cum)
        return encoded[impl.name]

    yield f"nearest search ({m}x64 vs 256)", lambda impl: nearest_sq(C, X, impl)[0]
    yield f"range encode ({sym.size} symbols)", enc
    yield f"range decode ({sym.size} symbols)", lambda impl: impl.range_decode(encoded[impl.name], cum, sym.size)
    yield f"fnv1a64 ({len(blob) // 1024} KiB)", lambda impl: impl.fnv1a64(blob)
    yield f"seq_sqnorm ({m}x64)", lambda impl: impl.seq_sqnorm(X)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--quick", action="store_true", help="smaller inputs")
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled kernels are not built; only the fallback is available")
    impls = [_fallback] + ([_kernels] if _kernels is not None else [])

    print(f"{'kernel':<36}" + "".join(f"{m.name:>12}" for m in impls) + f"{'speedup':>10}  match")
    for label, fn in cases(args.quick):
        times, outs = [], []
        for impl in impls:
            t, out = best_time(lambda: fn(impl), args.repeat)
            times.append(t)
            outs.append(out)
        same = all(np.array_equal(np.asarray(o), np.asarray(outs[0])) if not isinstance(o, (bytes, int))
                   else o == outs[0] for o in outs)
        speed = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{label:<36}" + "".join(f"{t * 1e3:10.1f}ms" for t in times) + f"{speed:>10}  {same}")


if __name__ == "__main__":
    main()

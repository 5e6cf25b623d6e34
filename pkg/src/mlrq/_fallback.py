"""Pure numpy / pure Python versions of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` and both must return
bit-identical results for the same inputs.
"""
from bisect import bisect_right

import numpy as np

TOP = 1 << 24
MASK32 = 0xFFFFFFFF

name = "python"


def seq_sqnorm(d):
    """Row-wise sum of squares, accumulated left to right over columns."""
    d = np.asarray(d, dtype=np.float64)
    acc = d[:, 0] * d[:, 0]
    for j in range(1, d.shape[1]):
        acc += d[:, j] * d[:, j]
    return acc


def refine_nearest(X, C, scores, thresh):
    """Exact nearest codeword among screened candidates.

    A codeword ``j`` is a candidate for row ``i`` when
    ``scores[i, j] <= thresh[i]``.  Candidates are rescored with the exact
    sequential squared distance; ties go to the lowest index.
    """
    rows, cols = np.nonzero(scores <= thresh[:, None])
    dist = seq_sqnorm(X[rows] - C[cols])
    order = np.lexsort((cols, dist, rows))
    rows, cols, dist = rows[order], cols[order], dist[order]
    first = np.ones(len(rows), dtype=bool)
    first[1:] = rows[1:] != rows[:-1]
    idx = np.empty(X.shape[0], dtype=np.int64)
    out = np.empty(X.shape[0], dtype=np.float64)
    idx[rows[first]] = cols[first]
    out[rows[first]] = dist[first]
    return idx, out


def range_encode(symbols, cum):
    cum = [int(c) for c in cum]
    total = cum[-1]
    out = bytearray()
    low = 0
    rng = MASK32
    cache = 0
    cache_size = 1

    def shift_low():
        nonlocal low, cache, cache_size
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = cache
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                cache_size -= 1
                if cache_size == 0:
                    break
            cache = (low >> 24) & 0xFF
        cache_size += 1
        low = (low & 0x00FFFFFF) << 8

    for s in symbols:
        s = int(s)
        a = rng * cum[s] // total
        b = rng * cum[s + 1] // total
        low += a
        rng = b - a
        while rng < TOP:
            rng <<= 8
            shift_low()

    # flush the value in [low, low + rng) with the most trailing zero bits
    for t in range(32, -1, -1):
        m = 1 << t
        v = (low + m - 1) & ~(m - 1)
        if v < low + rng:
            break
    low = v
    for _ in range(5):
        shift_low()
    # first byte is the integer part of a fraction in [0, 1): always zero
    del out[0]
    return bytes(out).rstrip(b"\x00")


def range_decode(data, cum, count):
    cum = [int(c) for c in cum]
    total = cum[-1]
    k = len(cum) - 1
    data = bytes(data)
    size = len(data)
    pos = 0
    code = 0
    for _ in range(4):
        code = (code << 8) | (data[pos] if pos < size else 0)
        pos += 1
    rng = MASK32
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        target = ((code + 1) * total - 1) // rng
        s = bisect_right(cum, target) - 1
        if s >= k:
            s = k - 1
        a = rng * cum[s] // total
        b = rng * cum[s + 1] // total
        code = (code - a) & MASK32
        rng = b - a
        while rng < TOP:
            code = ((code << 8) | (data[pos] if pos < size else 0)) & MASK32
            pos += 1
            rng <<= 8
        out[i] = s
    return out


def fnv1a64(data):
    h = 0xCBF29CE484222325
    for byte in bytes(data):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h

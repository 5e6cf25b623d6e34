# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: exact candidate rescoring and the range coder.

Mirrors ``_fallback``; results are bit-identical by construction
(sequential accumulation, integer-only coder, no fp contraction).
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdint cimport uint8_t, uint32_t, uint64_t, int64_t

cnp.import_array()

name = "cython"

cdef enum:
    TOP = 16777216  # 1 << 24


def seq_sqnorm(const double[:, ::1] d):
    cdef Py_ssize_t m = d.shape[0], n = d.shape[1], i, j
    cdef double acc
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc = acc + d[i, j] * d[i, j]
        o[i] = acc
    return out


def refine_nearest(const double[:, ::1] X, const double[:, ::1] C,
                   const double[:, ::1] scores, const double[::1] thresh,
                   int num_threads=1):
    cdef Py_ssize_t m = X.shape[0], n = X.shape[1], k = C.shape[0]
    cdef Py_ssize_t i, j, t
    cdef double acc, diff, best
    cdef int64_t besti
    idx = np.empty(m, dtype=np.int64)
    dist = np.empty(m, dtype=np.float64)
    cdef int64_t[::1] idx_v = idx
    cdef double[::1] dist_v = dist
    if num_threads < 1:
        num_threads = 1
    for i in prange(m, nogil=True, schedule="static", num_threads=num_threads):
        best = -1.0
        besti = -1
        for j in range(k):
            if scores[i, j] <= thresh[i]:
                acc = 0.0
                for t in range(n):
                    diff = X[i, t] - C[j, t]
                    acc = acc + diff * diff
                if besti < 0 or acc < best:
                    best = acc
                    besti = j
        idx_v[i] = besti
        dist_v[i] = best
    return idx, dist


cdef struct _Enc:
    uint64_t low
    uint32_t rng
    uint32_t cache
    uint64_t cache_size
    uint8_t* buf
    Py_ssize_t pos


cdef inline void _shift_low(_Enc* e) noexcept nogil:
    cdef uint32_t carry, temp
    if e.low < 0xFF000000ULL or e.low > 0xFFFFFFFFULL:
        carry = <uint32_t>(e.low >> 32)
        temp = e.cache
        while True:
            e.buf[e.pos] = <uint8_t>((temp + carry) & 0xFF)
            e.pos += 1
            temp = 0xFF
            e.cache_size -= 1
            if e.cache_size == 0:
                break
        e.cache = <uint32_t>((e.low >> 24) & 0xFF)
    e.cache_size += 1
    e.low = (e.low & 0x00FFFFFFULL) << 8


def range_encode(const int64_t[::1] symbols, const int64_t[::1] cum):
    cdef Py_ssize_t count = symbols.shape[0], i
    cdef uint64_t total = <uint64_t>cum[cum.shape[0] - 1]
    cdef uint64_t a, b, m, v
    cdef int64_t s
    cdef int t
    cdef _Enc e
    # each normalisation emits at most one byte; 6 for the virtual lead and flush
    cap = 4 * count + 16
    buf = bytearray(cap)
    cdef uint8_t[::1] bv = buf
    e.low = 0
    e.rng = 0xFFFFFFFFU
    e.cache = 0
    e.cache_size = 1
    e.buf = &bv[0]
    e.pos = 0
    with nogil:
        for i in range(count):
            s = symbols[i]
            a = <uint64_t>e.rng * <uint64_t>cum[s] // total
            b = <uint64_t>e.rng * <uint64_t>cum[s + 1] // total
            e.low += a
            e.rng = <uint32_t>(b - a)
            while e.rng < TOP:
                e.rng <<= 8
                _shift_low(&e)
        v = e.low
        t = 32
        while t >= 0:
            m = (<uint64_t>1) << t
            v = (e.low + m - 1) & ~(m - 1)
            if v < e.low + e.rng:
                break
            t -= 1
        e.low = v
        for i in range(5):
            _shift_low(&e)
    return bytes(buf[1:e.pos]).rstrip(b"\x00")


def range_decode(data, const int64_t[::1] cum, Py_ssize_t count):
    cdef const uint8_t[::1] src
    cdef bytes raw = bytes(data)
    cdef Py_ssize_t size = len(raw), pos = 0, i, lo, hi, mid
    cdef Py_ssize_t k = cum.shape[0] - 1
    cdef uint64_t total = <uint64_t>cum[k]
    cdef uint64_t target, a, b
    cdef uint32_t code = 0, rng = 0xFFFFFFFFU
    out = np.empty(count, dtype=np.int64)
    cdef int64_t[::1] o = out
    if size > 0:
        src = raw
    with nogil:
        for i in range(4):
            code = (code << 8) | (src[pos] if pos < size else 0)
            pos += 1
        for i in range(count):
            target = ((<uint64_t>code + 1) * total - 1) // rng
            # largest s with cum[s] <= target
            lo = 0
            hi = k
            while hi - lo > 1:
                mid = (lo + hi) >> 1
                if <uint64_t>cum[mid] <= target:
                    lo = mid
                else:
                    hi = mid
            a = <uint64_t>rng * <uint64_t>cum[lo] // total
            b = <uint64_t>rng * <uint64_t>cum[lo + 1] // total
            code = <uint32_t>(code - <uint32_t>a)
            rng = <uint32_t>(b - a)
            while rng < TOP:
                code = (code << 8) | (src[pos] if pos < size else 0)
                pos += 1
                rng <<= 8
            o[i] = lo
    return out


def fnv1a64(data):
    cdef bytes raw = bytes(data)
    cdef const uint8_t[::1] src
    cdef Py_ssize_t i, size = len(raw)
    cdef uint64_t h = 0xCBF29CE484222325ULL
    if size == 0:
        return int(h)
    src = raw
    with nogil:
        for i in range(size):
            h ^= src[i]
            h *= 0x100000001B3ULL
    return int(h)

"""Static-model arithmetic coding of per-layer index streams.

The coder is a 32-bit range coder with byte-wise carry propagation.  Symbol
intervals are computed as ``range * cum // total`` in 64-bit integers, so a
symbol never costs more than its ideal code length plus a vanishing
rounding term.  The final flush writes the shortest value that identifies
the interval and trailing zero bytes are dropped (the decoder pads with
zeros), so a stream costs about one byte on top of its information content.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from mlrq import _backend

#: Hard upper bound on a table's total count.
MAX_TOTAL = 1 << 24
#: Total that trained tables are rescaled to when the histogram exceeds it.
DEFAULT_TRAIN_TOTAL = 1 << 16


class EntropyError(ValueError):
    """Invalid symbols, tables or encoded data."""


@dataclass(frozen=True, eq=False)
class FreqTable:
    """Smoothed symbol frequencies of one layer; every count is at least 1."""

    counts: np.ndarray
    cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64, copy=True).ravel()
        if c.size < 1:
            raise EntropyError("a frequency table needs at least one symbol")
        if c.min() < 1:
            raise EntropyError("every count must be >= 1")
        if c.sum() > MAX_TOTAL:
            raise EntropyError(f"total count {c.sum()} exceeds {MAX_TOTAL}")
        cum = np.zeros(c.size + 1, dtype=np.int64)
        np.cumsum(c, out=cum[1:])
        c.setflags(write=False)
        cum.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "cum", cum)

    @classmethod
    def uniform(cls, k: int) -> "FreqTable":
        return cls(np.ones(k, dtype=np.int64))

    @property
    def symbol_count(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.cum[-1])

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    def entropy_bits(self) -> float:
        p = self.probabilities()
        return float(-(p * np.log2(p)).sum())

    def ideal_bits(self, symbols) -> float:
        """Information content of ``symbols`` under this table."""
        symbols = np.asarray(symbols, dtype=np.int64)
        return float(-np.log2(self.probabilities()[symbols]).sum())

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.symbol_count) + self.counts.astype("<u4").tobytes()

    @classmethod
    def from_buffer(cls, buf, offset: int = 0) -> tuple["FreqTable", int]:
        """Parse a table at ``offset``; returns the table and the next offset."""
        try:
            (k,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            counts = np.frombuffer(buf, dtype="<u4", count=k, offset=offset)
        except (struct.error, ValueError) as exc:
            raise EntropyError(f"truncated frequency table: {exc}") from None
        return cls(counts.astype(np.int64)), offset + 4 * k

    def __eq__(self, other):
        return isinstance(other, FreqTable) and np.array_equal(self.counts, other.counts)

    __hash__ = None


def rescale_counts(counts, max_total: int) -> np.ndarray:
    """Scale counts down so they sum to at most ``max_total``, keeping each >= 1."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total <= max_total:
        return counts.copy()
    k = counts.size
    if k > max_total:
        raise EntropyError(f"{k} symbols cannot fit a total of {max_total}")
    # reserve one per symbol, share the rest proportionally
    scaled = 1 + (counts - 1) * (max_total - k) // max(total - k, 1)
    return scaled


def train_tables(index_planes, layer_sizes, max_total: int | None = None) -> list[FreqTable]:
    """Laplace-smoothed (+1) histograms of observed indices, one per layer."""
    if len(index_planes) != len(layer_sizes):
        raise EntropyError("need one index plane per layer")
    tables = []
    for layer, (plane, k) in enumerate(zip(index_planes, layer_sizes)):
        plane = np.asarray(plane, dtype=np.int64).ravel()
        if plane.size and (plane.min() < 0 or plane.max() >= k):
            raise EntropyError(f"layer {layer}: index out of range [0, {k})")
        counts = np.bincount(plane, minlength=k) + 1
        cap = max_total if max_total is not None else min(MAX_TOTAL, max(DEFAULT_TRAIN_TOTAL, 4 * k))
        tables.append(FreqTable(rescale_counts(counts, min(cap, MAX_TOTAL))))
    return tables


def _symbols(symbols, table):
    s = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    if s.size and (s.min() < 0 or s.max() >= table.symbol_count):
        raise EntropyError(f"symbol out of range [0, {table.symbol_count})")
    return s


def ac_encode(symbols, table: FreqTable, impl=None) -> bytes:
    """Arithmetic-code ``symbols`` with a static table."""
    impl = impl or _backend.kernels
    return impl.range_encode(_symbols(symbols, table), table.cum)


def ac_decode(data: bytes, table: FreqTable, count: int, impl=None) -> np.ndarray:
    """Decode ``count`` symbols.

    Decoding with a table other than the one used to encode yields
    arbitrary in-range symbols; it never fails.
    """
    if count < 0:
        raise EntropyError("count must be non-negative")
    impl = impl or _backend.kernels
    return impl.range_decode(bytes(data), table.cum, int(count))

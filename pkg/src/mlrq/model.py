"""Model file: a layer stack with its per-layer frequency tables.

Layout (little-endian)::

    b"MLRQMDL1" | n u32 | L u16 | L x (k u32 | k*n f64 row-major | FreqTable)

A FreqTable is ``k u32`` followed by ``k`` u32 counts.  The 64-bit FNV-1a
hash of these bytes identifies the model inside bitstreams.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from mlrq import _backend
from mlrq.core import Codebook, LayerStack
from mlrq.entropy import FreqTable

MAGIC = b"MLRQMDL1"


class ModelFormatError(ValueError):
    pass


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    return _backend.kernels.fnv1a64(data)


@dataclass(frozen=True, eq=False)
class Model:
    stack: LayerStack
    tables: tuple = field(default=())

    def __post_init__(self):
        tables = tuple(self.tables) or tuple(FreqTable.uniform(k) for k in self.stack.sizes)
        if len(tables) != self.stack.L:
            raise ModelFormatError("need one frequency table per layer")
        for i, (t, k) in enumerate(zip(tables, self.stack.sizes)):
            if t.symbol_count != k:
                raise ModelFormatError(f"layer {i}: table has {t.symbol_count} symbols, codebook has {k}")
        object.__setattr__(self, "tables", tables)

    @cached_property
    def payload(self) -> bytes:
        n, L = self.stack.n, self.stack.L
        if n >= 1 << 32 or L >= 1 << 16:
            raise ModelFormatError("model too large for the file format")
        parts = [MAGIC, struct.pack("<IH", n, L)]
        for cb, table in zip(self.stack.layers, self.tables):
            parts.append(struct.pack("<I", cb.k))
            parts.append(cb.codewords.astype("<f8").tobytes())
            parts.append(table.to_bytes())
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self.payload

    @cached_property
    def hash(self) -> int:
        return fnv1a64(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Model":
        data = bytes(data)
        if data[:8] != MAGIC:
            raise ModelFormatError("not a model file (bad magic)")
        try:
            n, L = struct.unpack_from("<IH", data, 8)
            off = 14
            layers, tables = [], []
            for _ in range(L):
                (k,) = struct.unpack_from("<I", data, off)
                off += 4
                cw = np.frombuffer(data, dtype="<f8", count=k * n, offset=off).reshape(k, n)
                off += 8 * k * n
                table, off = FreqTable.from_buffer(data, off)
                layers.append(Codebook(cw.astype(np.float64)))
                tables.append(table)
        except (struct.error, ValueError) as exc:
            raise ModelFormatError(f"corrupt model file: {exc}") from None
        if off != len(data):
            raise ModelFormatError(f"{len(data) - off} trailing bytes in model file")
        return cls(LayerStack(layers), tables)

    def save(self, path) -> None:
        write_atomic(path, self.payload)

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_bytes(Path(path).read_bytes())


def write_atomic(path, data: bytes) -> None:
    """Write to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise

"""Codebooks, nearest-neighbour quantization and additive multi-stage coding.

Distances are mean squared errors per dimension.  Nearest-codeword search
screens candidates with a BLAS product and then rescores every codeword that
could possibly win with an exact, left-to-right accumulated squared
distance, so the chosen index never depends on BLAS blocking or thread
count.  Ties go to the lowest index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mlrq import _backend

_EPS = np.finfo(np.float64).eps
# score-matrix elements per screening chunk
_CHUNK_ELEMS = 1 << 22


class DimensionError(ValueError):
    """Vector or codebook dimensions do not agree."""


def _as_matrix(x, name="x"):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] < 1:
        raise DimensionError(f"{name} must be a vector or a 2-d array of vectors")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass(frozen=True, eq=False)
class Codebook:
    """``k`` codewords of dimension ``n``, stored row-major as float64."""

    codewords: np.ndarray
    sqnorms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.codewords, dtype=np.float64, order="C", copy=True)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise DimensionError("codebook must be a non-empty k x n array")
        if not np.all(np.isfinite(c)):
            raise ValueError("codebook contains non-finite values")
        c.setflags(write=False)
        sq = np.einsum("ij,ij->i", c, c)
        sq.setflags(write=False)
        object.__setattr__(self, "codewords", c)
        object.__setattr__(self, "sqnorms", sq)

    @property
    def k(self) -> int:
        return self.codewords.shape[0]

    @property
    def n(self) -> int:
        return self.codewords.shape[1]

    def rate(self) -> float:
        """Bits per dimension, ``log2(k) / n``."""
        return float(np.log2(self.k) / self.n)

    def __len__(self):
        return self.k

    def __getitem__(self, i):
        return self.codewords[i]


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Ordered codebooks of a multi-layer quantizer, plus training statistics."""

    layers: tuple
    train_distortion: tuple | None = None
    test_distortion: tuple | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a layer stack needs at least one codebook")
        n = layers[0].n
        if any(cb.n != n for cb in layers):
            raise DimensionError("all layers must share the same dimension")
        object.__setattr__(self, "layers", layers)
        for name in ("train_distortion", "test_distortion"):
            vals = getattr(self, name)
            if vals is not None:
                vals = tuple(float(v) for v in vals)
                if len(vals) != len(layers):
                    raise ValueError(f"{name} needs one value per layer")
                object.__setattr__(self, name, vals)

    @property
    def n(self) -> int:
        return self.layers[0].n

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> list[int]:
        return [cb.k for cb in self.layers]

    def __len__(self):
        return len(self.layers)

    def total_rate(self) -> float:
        """Sum of per-layer rates, in bits per dimension."""
        return float(sum(np.log2(k) for k in self.sizes) / self.n)

    def log2_equivalent_alphabet(self) -> float:
        """``log2`` of the product of the layer sizes."""
        return float(sum(np.log2(k) for k in self.sizes))

    def truncated(self, j: int) -> "LayerStack":
        if not 1 <= j <= self.L:
            raise ValueError(f"cannot truncate a {self.L}-layer stack to {j} layers")
        cut = lambda v: None if v is None else v[:j]  # noqa: E731
        return LayerStack(self.layers[:j], cut(self.train_distortion), cut(self.test_distortion))


@dataclass
class QuantizationResult:
    indices: list
    reconstruction: np.ndarray
    residual: np.ndarray
    per_layer_distortion: list


@dataclass
class BatchResult:
    """Multi-stage encoding of many vectors; rows follow the input order."""

    indices: np.ndarray  # (m, L) int64
    reconstruction: np.ndarray  # (m, n)
    residual: np.ndarray  # (m, n)
    distortion: np.ndarray  # (m, L) per-vector MSE after each layer


def nearest_sq(cb: Codebook, X: np.ndarray, impl=None):
    """Indices and exact squared distances (not divided by n) for rows of X."""
    m, n = X.shape
    if n != cb.n:
        raise DimensionError(f"vector length {n} does not match codebook dimension {cb.n}")
    C = cb.codewords
    cmax = float(np.sqrt(cb.sqnorms.max()))
    idx = np.empty(m, dtype=np.int64)
    sq = np.empty(m, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // cb.k)
    for s in range(0, m, step):
        Xc = X[s:s + step]
        scores = cb.sqnorms[None, :] - 2.0 * (Xc @ C.T)
        xnorm = np.sqrt(np.einsum("ij,ij->i", Xc, Xc))
        # covers rounding in both the screen and the exact rescoring
        tol = 8.0 * (n + 4) * _EPS * (xnorm + cmax) ** 2
        thresh = scores.min(axis=1) + tol
        idx[s:s + step], sq[s:s + step] = _backend.refine_nearest(
            Xc, C, np.ascontiguousarray(scores), thresh, impl
        )
    return idx, sq


def nearest_codewords(cb: Codebook, X) -> tuple[np.ndarray, np.ndarray]:
    """Batch form of :func:`nearest_codeword`: ``(indices, mse)`` per row."""
    X = _as_matrix(X)
    idx, sq = nearest_sq(cb, X)
    return idx, sq / X.shape[1]


def nearest_codeword(cb: Codebook, x) -> tuple[int, float]:
    """Index of the codeword closest to ``x`` and the attained MSE."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("x must be a single vector")
    idx, d = nearest_codewords(cb, x)
    return int(idx[0]), float(d[0])


def quantize_stage(cb: Codebook, residual: np.ndarray):
    """One greedy stage: pick codewords, return ``(idx, new_residual, mse)``."""
    idx, sq = nearest_sq(cb, residual)
    return idx, residual - cb.codewords[idx], sq / residual.shape[1]


def encode_batch(stack: LayerStack, X, layers: int | None = None) -> BatchResult:
    """Greedy multi-stage encoding of every row of ``X``."""
    X = _as_matrix(X)
    if X.shape[1] != stack.n:
        raise DimensionError(f"vector length {X.shape[1]} does not match stack dimension {stack.n}")
    L = stack.L if layers is None else layers
    if not 0 <= L <= stack.L:
        raise ValueError(f"layers must be in [0, {stack.L}]")
    m = X.shape[0]
    indices = np.empty((m, L), dtype=np.int64)
    dist = np.empty((m, L), dtype=np.float64)
    recon = np.zeros_like(X)
    r = X
    for i, cb in enumerate(stack.layers[:L]):
        idx, r, d = quantize_stage(cb, r)
        indices[:, i] = idx
        dist[:, i] = d
        recon = recon + cb.codewords[idx]
    return BatchResult(indices, recon, np.array(r, copy=True), dist)


def encode_multistage(stack: LayerStack, x) -> QuantizationResult:
    """Greedy residual encoding of a single vector through every layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("x must be a single vector")
    res = encode_batch(stack, x)
    return QuantizationResult(
        indices=[int(i) for i in res.indices[0]],
        reconstruction=res.reconstruction[0],
        residual=res.residual[0],
        per_layer_distortion=[float(d) for d in res.distortion[0]],
    )


def decode_batch(stack: LayerStack, indices) -> np.ndarray:
    """Sum the selected codewords of the first ``indices.shape[1]`` layers."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2:
        raise ValueError("indices must be an (m, j) array")
    m, j = indices.shape
    if j > stack.L:
        raise ValueError(f"{j} index columns for a {stack.L}-layer stack")
    recon = np.zeros((m, stack.n), dtype=np.float64)
    for i in range(j):
        cb = stack.layers[i]
        col = indices[:, i]
        if col.size and (col.min() < 0 or col.max() >= cb.k):
            raise IndexError(f"layer {i} index out of range [0, {cb.k})")
        recon = recon + cb.codewords[col]
    return recon


def decode_multistage(stack: LayerStack, indices: Sequence[int]) -> np.ndarray:
    """Reconstruction from a prefix of per-layer indices (empty gives zeros)."""
    idx = np.asarray(list(indices), dtype=np.int64).reshape(1, -1)
    return decode_batch(stack, idx)[0]


def mse(a, b) -> float:
    """Mean squared error per dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = (a - b)[None, :]
    return float(_backend.kernels.seq_sqnorm(np.ascontiguousarray(d))[0] / a.size)

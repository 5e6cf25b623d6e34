"""Random codebooks for i.i.d. Gaussian sources.

Codeword variances follow the residual-energy rule: a layer of rate ``R``
removes a fraction ``1 - 2**(-2R)`` of the energy left by the previous
layers, so its codewords get variance ``D_prev - D_next``.

All randomness is keyed: source realization ``i`` comes from
``SeedSequence(seed, spawn_key=(SOURCE, i))`` and layer ``l``'s codebook
from ``(CODEBOOK, l)``.  Results therefore do not depend on batch sizes or
on how many samples are requested.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from mlrq.core import Codebook, nearest_codewords, quantize_stage

SCHEDULE_MODES = ("residual-energy", "eq7-literal")
FAMILIES = ("gaussian", "binary")
NORMALIZATIONS = ("predicted", "measured")

DEFAULT_MAX_CODEWORDS = 1 << 20

# spawn-key namespaces
_SOURCE = 1
_CODEBOOK = 2
_CALIBRATION = 3
_SWEEP = 4


class CapacityError(ValueError):
    """A requested layer would need more codewords than allowed."""


@dataclass(frozen=True)
class SourceSpec:
    n: int
    sigma2: float = 1.0
    seed: int = 0
    num_samples: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def realizations(self, start: int = 0, count: int | None = None, stream: int = _SOURCE) -> np.ndarray:
        """Source vectors ``start .. start+count``, each from its own RNG stream."""
        count = self.num_samples if count is None else count
        sd = math.sqrt(self.sigma2)
        out = np.empty((count, self.n))
        for j in range(count):
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(stream, start + j)))
            out[j] = rng.standard_normal(self.n) * sd
        return out


@dataclass(frozen=True)
class ScheduleEntry:
    layer: int
    rate: float
    codeword_variance: float
    predicted_distortion: float


@dataclass(frozen=True)
class RdRow:
    layer: int
    cum_rate_bits: float
    distortion: float
    shannon_bound: float
    std_error: float


class RdTrace:
    """Per-layer cumulative rate and empirical distortion of one simulation."""

    HEADER = ("layer", "cum_rate_bits", "distortion", "shannon_bound")

    def __init__(self, rows: Sequence[RdRow]):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def gap_db(self) -> np.ndarray:
        """``10 log10(D_emp / D_bound)`` per layer."""
        return 10 * np.log10(self.column("distortion") / self.column("shannon_bound"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([r.layer, repr(r.cum_rate_bits), repr(r.distortion), repr(r.shannon_bound)])
        return buf.getvalue()


def shannon_bound(sigma2: float, rate: float) -> float:
    """Gaussian distortion-rate function ``sigma2 * 2**(-2 rate)``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    if not rate >= 0:
        raise ValueError("rate must be >= 0")
    return sigma2 * 2.0 ** (-2.0 * rate)


def gaussian_stage_rate(d_prev: float, d_next: float) -> float:
    """Rate needed to go from distortion ``d_prev`` to ``d_next``, clamped at 0."""
    if not (d_prev > 0 and d_next > 0):
        raise ValueError("distortions must be > 0")
    return max(0.0, 0.5 * math.log2(d_prev / d_next))


def variance_schedule(sigma2: float, rates: Iterable[float], mode: str = "residual-energy") -> list[ScheduleEntry]:
    """Per-layer codeword variances and predicted distortions.

    ``residual-energy``: variance_i = D_{i-1} - D_i with D_i = D_{i-1} 2^{-2R_i}.
    ``eq7-literal``: variance_i = variance_{i-1} (1 - 2^{-2R_i}), starting from
    sigma2 (1 - 2^{-2R_1}).  The two agree on the first layer only.
    """
    if mode not in SCHEDULE_MODES:
        raise ValueError(f"unknown schedule mode {mode!r}")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    rates = [float(r) for r in rates]
    if any(not r >= 0 for r in rates):
        raise ValueError("rates must be >= 0")
    out = []
    d_prev = sigma2
    var_prev = sigma2
    for i, r in enumerate(rates, start=1):
        shrink = 2.0 ** (-2.0 * r)
        d = d_prev * shrink
        if mode == "residual-energy":
            var = d_prev - d
        else:
            var = var_prev * (1.0 - shrink)
        out.append(ScheduleEntry(i, r, var, d))
        d_prev, var_prev = d, var
    return out


def _rng(seed):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


def _check_shape(k, n, variance):
    if k < 1 or n < 1:
        raise ValueError("k and n must be >= 1")
    if not variance >= 0:
        raise ValueError("variance must be >= 0")


def sample_gaussian_codebook(k: int, n: int, variance: float, seed) -> Codebook:
    """``k`` codewords with i.i.d. N(0, variance) entries."""
    _check_shape(k, n, variance)
    z = _rng(seed).standard_normal((k, n))
    return Codebook(z * math.sqrt(variance))


def sample_binary_codebook(k: int, n: int, variance: float, seed) -> Codebook:
    """``k`` codewords with i.i.d. equiprobable entries ``+-sqrt(variance)``."""
    _check_shape(k, n, variance)
    signs = _rng(seed).integers(0, 2, size=(k, n), dtype=np.int8)
    alpha = math.sqrt(variance)
    return Codebook(np.where(signs == 1, alpha, -alpha))


def codebook_size(n: int, rate: float, max_codewords: int = DEFAULT_MAX_CODEWORDS) -> int:
    """Nearest integer to ``2**(n rate)``, at least 1."""
    exponent = n * rate
    if exponent > math.log2(max_codewords) + 1:
        raise CapacityError(f"rate {rate} at n={n} needs more than {max_codewords} codewords")
    k = max(1, int(round(2.0 ** exponent)))
    if k > max_codewords:
        raise CapacityError(f"rate {rate} at n={n} needs {k} codewords (cap {max_codewords})")
    return k


_SAMPLERS = {"gaussian": sample_gaussian_codebook, "binary": sample_binary_codebook}


def _per_sample_stats(sqerr: np.ndarray):
    mean = float(sqerr.mean())
    se = float(sqerr.std(ddof=1) / math.sqrt(sqerr.size)) if sqerr.size > 1 else 0.0
    return mean, se


def simulate_multistage(
    src: SourceSpec,
    rates: Sequence[float],
    family: str = "gaussian",
    mode: str = "residual-energy",
    normalization: str = "predicted",
    max_codewords: int = DEFAULT_MAX_CODEWORDS,
    progress=None,
) -> RdTrace:
    """Distortion-rate trace of a random multi-stage quantizer.

    One codebook per layer is drawn, used to quantize the residuals of all
    source realizations, and discarded, so memory stays at one codebook.

    ``normalization="measured"`` sizes each layer from the distortion
    actually reached on an independent set of calibration realizations
    instead of the predicted one (residual-energy mode only).
    """
    if family not in _SAMPLERS:
        raise ValueError(f"unknown codebook family {family!r}")
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    if normalization == "measured" and mode != "residual-energy":
        raise ValueError("measured normalization requires the residual-energy schedule")
    if not rates:
        raise ValueError("need at least one layer")
    sizes = [codebook_size(src.n, r, max_codewords) for r in rates]
    realized = [math.log2(k) / src.n for k in sizes]
    schedule = variance_schedule(src.sigma2, realized, mode)
    sampler = _SAMPLERS[family]

    residual = src.realizations()
    calib = src.realizations(stream=_CALIBRATION) if normalization == "measured" else None
    d_measured = src.sigma2
    rows = []
    cum_rate = 0.0
    for i, (k, entry) in enumerate(zip(sizes, schedule)):
        if calib is not None:
            variance = d_measured * (1.0 - 2.0 ** (-2.0 * entry.rate))
        else:
            variance = entry.codeword_variance
        cb = sampler(k, src.n, variance, np.random.SeedSequence(src.seed, spawn_key=(_CODEBOOK, i)))
        _, residual, d = quantize_stage(cb, residual)
        if calib is not None:
            _, calib, dc = quantize_stage(cb, calib)
            d_measured = float(dc.mean())
        cum_rate += entry.rate
        mean, se = _per_sample_stats(d)
        rows.append(RdRow(i + 1, cum_rate, mean, shannon_bound(src.sigma2, cum_rate), se))
        if progress is not None:
            progress(rows[-1])
    return RdTrace(rows)


@dataclass(frozen=True)
class OrthogonalityStats:
    residual_vs_estimate: float
    residual_vs_source: float
    mean_distortion: float


def _orthogonality(X: np.ndarray, cb: Codebook) -> OrthogonalityStats:
    idx, d = nearest_codewords(cb, X)
    xhat = cb.codewords[idx]
    res = X - xhat
    n = X.shape[1]
    return OrthogonalityStats(
        float(np.einsum("ij,ij->i", res, xhat).mean() / n),
        float(np.einsum("ij,ij->i", res, X).mean() / n),
        float(d.mean()),
    )


def orthogonality_statistics(src: SourceSpec, cb: Codebook) -> OrthogonalityStats:
    """Mean ``<x - xhat, xhat>/n``, mean ``<x - xhat, x>/n`` and mean MSE."""
    if cb.n != src.n:
        raise ValueError(f"codebook dimension {cb.n} does not match source dimension {src.n}")
    return _orthogonality(src.realizations(), cb)


@dataclass(frozen=True)
class SweepRow:
    variance: float
    mean_distortion: float
    residual_vs_estimate: float
    residual_vs_source: float


class SweepTable:
    HEADER = ("variance", "distortion", "residual_vs_estimate", "residual_vs_source")

    def __init__(self, rows: Sequence[SweepRow]):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def argmin_variance(self) -> float:
        return self.rows[int(np.argmin(self.column("mean_distortion")))].variance

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([repr(r.variance), repr(r.mean_distortion), repr(r.residual_vs_estimate), repr(r.residual_vs_source)])
        return buf.getvalue()


def first_layer_variance(sigma2: float, k: int, n: int) -> float:
    """``sigma2 (1 - 2**(-2R))`` with ``R = log2(k)/n``."""
    return sigma2 * (1.0 - 2.0 ** (-2.0 * math.log2(k) / n))


def default_sweep_variances(src: SourceSpec, k: int, points: int = 41, span: float = 4.0) -> list[float]:
    """Evenly spaced variances over ``[0, span * first_layer_variance]``."""
    top = span * first_layer_variance(src.sigma2, k, src.n)
    return [float(v) for v in np.linspace(0.0, top, points)]


def sweep_codebook_variance(src: SourceSpec, k: int, variances: Sequence[float]) -> SweepTable:
    """Distortion and orthogonality of one random codebook scaled to each variance.

    The same standard-normal codebook and the same source realizations are
    reused at every point, so the rows differ only in scale.
    """
    variances = [float(v) for v in variances]
    if not variances:
        raise ValueError("need at least one variance")
    if any(not v >= 0 for v in variances):
        raise ValueError("variances must be >= 0")
    if k < 1:
        raise ValueError("k must be >= 1")
    base = np.random.default_rng(np.random.SeedSequence(src.seed, spawn_key=(_SWEEP,))).standard_normal((k, src.n))
    X = src.realizations()
    rows = []
    for v in variances:
        s = _orthogonality(X, Codebook(base * math.sqrt(v)))
        rows.append(SweepRow(v, s.mean_distortion, s.residual_vs_estimate, s.residual_vs_source))
    return SweepTable(rows)

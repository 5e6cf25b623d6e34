"""Layer-by-layer k-means training of a residual quantizer."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from mlrq.core import Codebook, LayerStack, _as_matrix, nearest_sq, quantize_stage

log = logging.getLogger(__name__)

POLICIES = ("report", "strict", "shrink")


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    layer_sizes: tuple = ()
    max_iters: int = 100
    rel_tol: float = 1e-4
    restarts: int = 3
    overfit_margin: float = 0.10
    seed: int = 0
    policy: str = "report"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(k) for k in self.layer_sizes))
        if any(k < 1 for k in self.layer_sizes):
            raise ValueError("layer sizes must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.overfit_margin >= 0:
            raise ValueError("overfit_margin must be >= 0")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")


def parse_layer_sizes(text: str) -> tuple:
    """Parse ``"256x5,128x5"`` (size x repeat) into a tuple of sizes."""
    sizes = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        k, _, rep = part.partition("x")
        try:
            k, rep = int(k), int(rep) if rep else 1
        except ValueError:
            raise ValueError(f"bad layer sizes {part!r}") from None
        if k < 1 or rep < 1:
            raise ValueError(f"bad layer sizes {part!r}")
        sizes.extend([k] * rep)
    if not sizes:
        raise ValueError("no layer sizes given")
    return tuple(sizes)


@dataclass
class KMeansRun:
    centroids: np.ndarray
    distortion: float
    iterations: int
    history: list = field(default_factory=list)


def _assign(C, X):
    return nearest_sq(Codebook(C), X)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding."""
    m = X.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = np.einsum("ij,ij->i", X - X[chosen[0]], X - X[chosen[0]])
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            cdf = np.cumsum(d2)
            j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            j = min(j, m - 1)
        else:
            # every point coincides with a centre; duplicates get reseeded later
            j = int(rng.integers(m))
        chosen.append(j)
        diff = X - X[j]
        np.minimum(d2, np.einsum("ij,ij->i", diff, diff), out=d2)
    return X[chosen].copy()


def _update(X, idx, sq, C):
    k, n = C.shape
    counts = np.bincount(idx, minlength=k)
    new = np.empty_like(C)
    for t in range(n):
        new[:, t] = np.bincount(idx, weights=X[:, t], minlength=k)
    live = counts > 0
    new[live] /= counts[live, None]
    empty = np.flatnonzero(~live)
    if empty.size:
        far = np.argsort(-sq, kind="stable")[: empty.size]
        new[empty] = X[far]
    return new


def lloyd(X: np.ndarray, init: np.ndarray, max_iters: int = 100, rel_tol: float = 1e-4) -> KMeansRun:
    """Lloyd iterations from ``init``; distortion is MSE per dimension."""
    n = X.shape[1]
    C = np.array(init, dtype=np.float64)
    idx, sq = _assign(C, X)
    d = float(sq.mean() / n)
    history = [d]
    it = 0
    for it in range(1, max_iters + 1):
        C = _update(X, idx, sq, C)
        idx, sq = _assign(C, X)
        d_new = float(sq.mean() / n)
        history.append(d_new)
        done = d <= 0 or (d - d_new) < rel_tol * d
        d = d_new
        if done:
            break
    return KMeansRun(C, d, it, history)


def _child_seeds(seed, count):
    base = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + (r,)) for r in range(count)]


def kmeans_runs(data, k: int, cfg: TrainConfig | None = None, seed=None) -> list[KMeansRun]:
    """All ``cfg.restarts`` k-means++/Lloyd runs, in restart order."""
    cfg = cfg or TrainConfig()
    X = _as_matrix(data, "data")
    if not 1 <= k <= X.shape[0]:
        raise TrainingError(f"k={k} needs between 1 and {X.shape[0]} (number of vectors)")
    seeds = _child_seeds(cfg.seed if seed is None else seed, cfg.restarts)
    runs = []
    for ss in seeds:
        init = kmeans_plusplus(X, k, np.random.default_rng(ss))
        runs.append(lloyd(X, init, cfg.max_iters, cfg.rel_tol))
    return runs


def kmeans(data, k: int, cfg: TrainConfig | None = None, seed=None) -> tuple[Codebook, float]:
    """Best-of-restarts k-means codebook and its mean per-dimension distortion."""
    cb, run = _kmeans_best(data, k, cfg, seed)
    return cb, run.distortion


def _kmeans_best(X, k, cfg, seed):
    # min() keeps the earliest restart on ties
    best = min(kmeans_runs(X, k, cfg, seed), key=lambda r: r.distortion)
    return Codebook(best.centroids), best


@dataclass(frozen=True)
class LayerReport:
    layer: int
    k: int
    train_mse: float
    test_mse: float
    iterations: int
    ratio: float
    flagged: bool


@dataclass
class TrainReport:
    layers: list = field(default_factory=list)
    stopped_at: int | None = None  # layer index where a strict policy stopped
    input_variance: list = field(default_factory=list)

    HEADER = ("layer", "k", "train_mse", "test_mse", "ratio", "flagged")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.layers:
            w.writerow([r.layer, r.k, repr(r.train_mse), repr(r.test_mse), repr(r.ratio), int(r.flagged)])
        return buf.getvalue()

    @property
    def flagged_layers(self) -> list[int]:
        return [r.layer for r in self.layers if r.flagged]


def _ratio(test, train):
    if train > 0:
        return test / train
    return 1.0 if test == 0 else float("inf")


def train_multilayer(train, test, cfg: TrainConfig) -> tuple[LayerStack, TrainReport]:
    """Train one k-means codebook per layer on the residuals of the previous layers.

    Test residuals are pushed through the same layers (assignment only) to
    compare distortions; a layer is flagged when its test MSE exceeds
    ``(1 + margin)`` times its training MSE.  Policy ``strict`` stops before
    the first flagged layer, ``shrink`` halves ``k`` until the layer passes
    (or ``k`` reaches 1), ``report`` only flags.
    """
    R = _as_matrix(train, "train").copy()
    T = _as_matrix(test, "test").copy()
    if R.shape[1] != T.shape[1]:
        raise TrainingError("train and test vectors differ in dimension")
    if not cfg.layer_sizes:
        raise TrainingError("no layer sizes given")
    n = R.shape[1]
    mu = cfg.overfit_margin
    layers, report = [], TrainReport()
    for i, k_req in enumerate(cfg.layer_sizes):
        seed = np.random.SeedSequence(cfg.seed, spawn_key=(i,))
        k = k_req
        while True:
            cb, run = _kmeans_best(R, k, cfg, seed)
            _, R_next, d_train = quantize_stage(cb, R)
            _, T_next, d_test = quantize_stage(cb, T)
            train_mse, test_mse = float(d_train.mean()), float(d_test.mean())
            flagged = test_mse > (1.0 + mu) * train_mse
            if cfg.policy != "shrink" or not flagged or k == 1:
                break
            log.info("layer %d: k=%d overfits (ratio %.3f), halving", i + 1, k, _ratio(test_mse, train_mse))
            k = max(1, k // 2)
        row = LayerReport(i + 1, k, train_mse, test_mse, run.iterations, _ratio(test_mse, train_mse), flagged)
        if flagged and cfg.policy == "strict":
            if not layers:
                raise TrainingError("the first layer already exceeds the overfit margin")
            report.stopped_at = i
            log.info("layer %d flagged; strict policy stops with %d layers", i + 1, len(layers))
            break
        report.input_variance.append(float(R.var(axis=0).sum() / n))
        report.layers.append(row)
        layers.append(cb)
        R, T = R_next, T_next
        log.info("layer %d: k=%d train %.4f test %.4f", i + 1, k, train_mse, test_mse)
    stack = LayerStack(
        layers,
        train_distortion=[r.train_mse for r in report.layers],
        test_distortion=[r.test_mse for r in report.layers],
    )
    return stack, report

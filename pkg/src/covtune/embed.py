"""Project trials into 2D by coverage-vector similarity.

The layout is a neighbor-graph stochastic embedding: a symmetrized k-NN
graph over the Jaccard distance matrix with locally adaptive edge
weights, laid out by attractive forces on edges and repulsive forces
from uniformly sampled negative pairs. The contract is statistical
(neighborhood preservation), not geometric; quality is reported as
trustworthiness at k = n_neighbors. Deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .buckets import assign_buckets
from .core import Experiment, jaccard_distance
from .errors import DegenerateLayoutError, DomainError, JobError, TooFewTrialsError

_SMOOTH_TOL = 1e-5
_MIN_GRID = 8


@dataclass(frozen=True)
class EmbeddingConfig:
    method: str = "neighbor-embedding"
    distance: str = "jaccard"
    n_neighbors: int = 15
    seed: int = 0
    iterations: int = 300


@dataclass(frozen=True)
class EmbeddingResult:
    coords: np.ndarray  # (N_T, 2), row i-1 = trial i
    config_used: EmbeddingConfig
    quality: float

    def coords_by_trial(self) -> dict[int, tuple[float, float]]:
        return {
            i + 1: (float(x), float(y)) for i, (x, y) in enumerate(self.coords)
        }


def distance_matrix(exp: Experiment) -> np.ndarray:
    """Symmetric N_T x N_T Jaccard distance matrix with a zero diagonal."""
    words = exp.coverage_matrix()
    pop = np.bitwise_count(words).sum(axis=1).astype(np.int64)
    n = exp.n_trials
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n - 1):
        inter = np.bitwise_count(words[i + 1 :] & words[i]).sum(axis=1).astype(np.int64)
        union = pop[i + 1 :] + pop[i] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            d = 1.0 - inter / union
        d[union == 0] = 0.0
        out[i, i + 1 :] = d
        out[i + 1 :, i] = d
    return out


def _smooth_knn_weights(dists: np.ndarray, k: int) -> np.ndarray:
    """Per-row adaptive kernel over the k nearest distances (rows sorted)."""
    target = math.log2(k)
    n = dists.shape[0]
    weights = np.zeros_like(dists)
    for i in range(n):
        row = dists[i]
        rho = row[0]
        adjusted = np.maximum(row - rho, 0.0)
        lo, hi = 0.0, np.inf
        sigma = 1.0
        for _ in range(64):
            s = np.exp(-adjusted / sigma).sum()
            if abs(s - target) < _SMOOTH_TOL:
                break
            if s > target:
                hi = sigma
                sigma = (lo + hi) / 2.0
            else:
                lo = sigma
                sigma = sigma * 2.0 if hi == np.inf else (lo + hi) / 2.0
        sigma = max(sigma, 1e-12)
        weights[i] = np.exp(-adjusted / sigma)
    return weights


def _build_graph(D: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetrized weighted k-NN edge list (heads, tails, weights)."""
    n = D.shape[0]
    order = np.argsort(D + np.eye(n) * (D.max() + 1.0), axis=1, kind="stable")
    knn = order[:, :k]
    knn_d = np.take_along_axis(D, knn, axis=1)
    w = _smooth_knn_weights(knn_d, k)
    P = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), k)
    P[rows, knn.ravel()] = w.ravel()
    P = P + P.T - P * P.T
    heads, tails = np.nonzero(np.triu(P, 1) > 1e-8)
    return heads, tails, P[heads, tails]


def embed(
    exp: Experiment,
    cfg: EmbeddingConfig = EmbeddingConfig(),
    distances: np.ndarray | None = None,
    should_stop: Callable[[], bool] | None = None,
) -> EmbeddingResult:
    """Lay out all trials in 2D; deterministic for a fixed seed."""
    n = exp.n_trials
    if not 2 <= cfg.n_neighbors <= n - 1:
        raise TooFewTrialsError(
            f"n_neighbors must be in [2, {n - 1}] for {n} trials"
        )
    if cfg.distance != "jaccard":
        raise DomainError(f"unknown distance {cfg.distance!r}")
    if cfg.method != "neighbor-embedding":
        raise DomainError(f"unknown method {cfg.method!r}")
    D = distance_matrix(exp) if distances is None else distances
    heads, tails, weights = _build_graph(D, cfg.n_neighbors)
    rng = np.random.default_rng(cfg.seed)
    coords = rng.uniform(-10.0, 10.0, size=(n, 2))

    n_neg = 5
    epochs = cfg.iterations
    for epoch in range(epochs):
        if should_stop is not None and should_stop():
            raise JobError("embedding cancelled")
        alpha = 1.0 - epoch / epochs
        delta = coords[heads] - coords[tails]
        r2 = (delta**2).sum(axis=1)
        force = (-2.0 / (1.0 + r2))[:, None] * delta
        force = np.clip(force, -4.0, 4.0) * weights[:, None]
        step = np.zeros_like(coords)
        np.add.at(step, heads, force)
        np.add.at(step, tails, -force)

        neg = rng.integers(0, n, size=(heads.shape[0], n_neg))
        for j in range(n_neg):
            other = neg[:, j]
            delta = coords[heads] - coords[other]
            r2 = (delta**2).sum(axis=1)
            rep = (2.0 / ((0.001 + r2) * (1.0 + r2)))[:, None] * delta
            rep = np.clip(rep, -4.0, 4.0) * weights[:, None]
            np.add.at(step, heads, rep)
        coords += alpha * step

    quality = trustworthiness(D, coords, cfg.n_neighbors)
    return EmbeddingResult(coords=coords, config_used=cfg, quality=quality)


def trustworthiness(D_high: np.ndarray, coords: np.ndarray, k: int) -> float:
    """How well embedding neighborhoods preserve original neighborhoods.

    1 - 2/(n k (2n - 3k - 1)) * sum over points of sum over embedding
    neighbors not among the original k nearest of (original rank - k).
    """
    n = D_high.shape[0]
    if not 1 <= k < n / 2:
        k = max(1, min(k, (n - 1) // 2))
    diff = coords[:, None, :] - coords[None, :, :]
    D_low = np.sqrt((diff**2).sum(axis=2))
    big = np.eye(n)
    order_high = np.argsort(D_high + big * (D_high.max() + 1.0), axis=1, kind="stable")
    order_low = np.argsort(D_low + big * (D_low.max() + 1.0), axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    ranks[rows, order_high] = np.arange(n)[None, :]
    total = 0.0
    for i in range(n):
        high_set = set(order_high[i, :k].tolist())
        for j in order_low[i, :k]:
            if int(j) not in high_set:
                total += ranks[i, j] + 1 - k
    return float(1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * total)


def density_field(
    result: EmbeddingResult, values: np.ndarray, grid: int
) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """Value-weighted Gaussian kernel density on a padded bounding-box grid.

    Returns (field, (x0, y0, x1, y1)). field[iy, ix] is the kernel mass
    inside that cell divided by the cell area; bandwidth is Scott's rule
    over the 2D coordinates, and the box is padded so the total mass over
    the grid equals sum(values) to well under 1e-6 relative.
    """
    if grid < _MIN_GRID:
        raise DomainError(f"grid must be >= {_MIN_GRID}")
    coords = result.coords
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != coords.shape[0]:
        raise DomainError("values must have one entry per trial")
    n = coords.shape[0]
    sx = float(coords[:, 0].std())
    sy = float(coords[:, 1].std())
    if sx == 0.0 and sy == 0.0:
        raise DegenerateLayoutError(
            "all trials share one 2D position; re-run the embedding with a "
            "different seed or more iterations before computing densities"
        )
    factor = n ** (-1.0 / 6.0)
    hx = max(factor * sx, 1e-9)
    hy = max(factor * sy, 1e-9)
    pad = 6.0
    x0, x1 = coords[:, 0].min() - pad * hx, coords[:, 0].max() + pad * hx
    y0, y1 = coords[:, 1].min() - pad * hy, coords[:, 1].max() + pad * hy
    xe = np.linspace(x0, x1, grid + 1)
    ye = np.linspace(y0, y1, grid + 1)
    # Exact per-cell Gaussian mass via CDF differences, product-separable.
    cx = ndtr((xe[None, :] - coords[:, 0][:, None]) / hx)
    cy = ndtr((ye[None, :] - coords[:, 1][:, None]) / hy)
    mx = np.diff(cx, axis=1)
    my = np.diff(cy, axis=1)
    mass = np.einsum("i,iy,ix->yx", values, my, mx)
    cell_area = (xe[1] - xe[0]) * (ye[1] - ye[0])
    return mass / cell_area, (float(x0), float(y0), float(x1), float(y1))


def color_by_parameter(exp: Experiment, param: str) -> list[str]:
    """Per-trial color-class labels using the shared value-bucket scheme."""
    buckets, idx = assign_buckets(exp, param)
    return [buckets[i].label for i in idx]

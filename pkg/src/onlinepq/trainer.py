"""Batch initialization of a product-quantization codebook."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Codebook, DimensionError, PQConfig, as_matrix, nearest_subcodewords


@dataclass(frozen=True)
class TrainConfig:
    """Lloyd iteration settings.

    Args:
        max_iterations: Upper bound on Lloyd refinement steps.
        rel_tol: Stop once the relative drop in total error is at most this.
        seed: Seed for k-means++ initialization.
    """

    max_iterations: int = 100
    rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.rel_tol >= 0:
            raise ValueError(f"rel_tol must be >= 0, got {self.rel_tol}")


def _unique_in_order(points: np.ndarray) -> np.ndarray:
    _, first = np.unique(points, axis=0, return_index=True)
    return points[np.sort(first)]


def _kmeanspp(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.einsum("ij,ij->i", points - centers[0], points - centers[0])
    for j in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        diff = points - centers[j]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return centers


def _update_centroids(points, assign, errors, centers):
    K, d = centers.shape
    sums = np.zeros((K, d))
    np.add.at(sums, assign, points)
    counts = np.bincount(assign, minlength=K)
    new = centers.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live, None]
    empty = np.flatnonzero(~live)
    if empty.size:
        # re-seed empties at the worst-quantized points, largest first
        worst = np.argsort(-errors, kind="stable")
        for k, idx in zip(empty, worst):
            new[k] = points[idx]
    return new


def lloyd_kmeans(points, K: int, cfg: TrainConfig = TrainConfig(),
                 history: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cluster ``points`` into ``K`` centroids with k-means++ and Lloyd steps.

    The returned assignment maps each point to its nearest returned centroid,
    ties going to the lowest centroid index. When there are at most ``K``
    distinct points, the distinct points (in order of first appearance) become
    the centroids and any remaining slots repeat them, so the repeats never
    receive an assignment.

    Args:
        points: ``(n, d)`` array, ``n >= 1``.
        K: Number of centroids.
        cfg: Iteration limits and seed.
        history: If given, the total error after every assignment step is
            appended to it.

    Returns:
        ``(centroids, assignment)`` with shapes ``(K, d)`` and ``(n,)``.
    """
    P = as_matrix(points)
    if P.shape[0] < 1:
        raise ValueError("lloyd_kmeans needs at least one point")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")

    distinct = _unique_in_order(P)
    if distinct.shape[0] <= K:
        reps = -(-K // distinct.shape[0])
        centers = np.tile(distinct, (reps, 1))[:K].copy()
        assign, err = nearest_subcodewords(P, centers)
        if history is not None:
            history.append(float(err.sum()))
        return centers, assign

    rng = np.random.default_rng(cfg.seed)
    centers = _kmeanspp(P, K, rng)
    assign, err = nearest_subcodewords(P, centers)
    total = float(err.sum())
    if history is not None:
        history.append(total)
    for _ in range(cfg.max_iterations):
        centers = _update_centroids(P, assign, err, centers)
        assign, err = nearest_subcodewords(P, centers)
        new_total = float(err.sum())
        if history is not None:
            history.append(new_total)
        converged = total - new_total <= cfg.rel_tol * total
        total = new_total
        if converged:
            break
    return centers, assign


def train_codebook(initial_data, config: PQConfig, cfg: TrainConfig = TrainConfig()) -> Codebook:
    """Learn the initial codebook and counters from a batch of vectors.

    Each subspace is clustered independently; ``counts[m, k]`` is the number
    of initial vectors whose ``m``-th sub-vector was assigned to ``k``.
    """
    X = as_matrix(initial_data)
    if X.shape[0] == 0:
        raise ValueError("cannot train a codebook on an empty data set")
    if X.shape[1] != config.D:
        raise DimensionError(f"data has {X.shape[1]} columns, config expects D={config.D}")
    subs = X.reshape(X.shape[0], config.M, config.d_sub)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(config.M, dtype=np.uint64)
    codewords = np.empty((config.M, config.K, config.d_sub))
    counts = np.zeros((config.M, config.K), dtype=np.uint64)
    for m in range(config.M):
        sub_cfg = TrainConfig(cfg.max_iterations, cfg.rel_tol, int(seeds[m]))
        centers, assign = lloyd_kmeans(subs[:, m, :], config.K, sub_cfg)
        codewords[m] = centers
        counts[m] = np.bincount(assign, minlength=config.K)
    return Codebook(config, codewords, counts)

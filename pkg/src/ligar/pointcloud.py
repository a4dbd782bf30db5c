"""Point-cloud sampling and local feature extraction.

``farthest_point_sample`` and ``ball_group`` are pure geometry on numpy
arrays with fully deterministic tie handling, so their index output is
reproducible bit for bit.  ``set_abstraction`` runs the grouped
neighborhoods through a shared point MLP on the tape and max-pools, so
gradients flow into the MLP weights.
"""

from __future__ import annotations

import numpy as np

from .config import ScaleConfig
from .errors import DataError
from .tape import Tensor, concat, gather_flat, max_reduce, relu, reshape
from .nn import linear

__all__ = ["farthest_point_sample", "ball_group", "set_abstraction",
            "set_abstraction_batch"]


def _check_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"points must be [N, 3], got {pts.shape}")
    if pts.shape[0] < 1:
        raise DataError("empty point set")
    return pts


def _lex_smallest(pts: np.ndarray, candidates: np.ndarray) -> int:
    """Candidate whose (x, y, z, original index) tuple is smallest."""
    sub = pts[candidates]
    order = np.lexsort((candidates, sub[:, 2], sub[:, 1], sub[:, 0]))
    return int(candidates[order[0]])


def farthest_point_sample(points: np.ndarray, m: int) -> np.ndarray:
    """Greedy maximin subset of ``min(m, N)`` point indices.

    The first pick is the lexicographically smallest (x, y, z); each later
    pick maximizes the squared distance to the already-selected set, with
    ties broken lexicographically by coordinates and then by original
    index.  Permuting the input can therefore only permute which duplicate
    of a coordinate is chosen, never the selected coordinate set.
    """
    pts = _check_points(points)
    if m < 1:
        raise DataError("sample count must be >= 1")
    n = pts.shape[0]
    take = min(m, n)
    seed = _lex_smallest(pts, np.arange(n))
    selected = np.empty(take, dtype=np.int64)
    selected[0] = seed
    diff = pts - pts[seed]
    min_d2 = np.sum(diff * diff, axis=1)
    min_d2[seed] = -1.0  # selected sentinel: below any real squared distance
    for step in range(1, take):
        best = min_d2.max()
        pick = _lex_smallest(pts, np.flatnonzero(min_d2 == best))
        selected[step] = pick
        diff = pts - pts[pick]
        np.minimum(min_d2, np.sum(diff * diff, axis=1), out=min_d2)
        min_d2[pick] = -1.0
    return selected


def ball_group(points: np.ndarray, centroids: np.ndarray, radius: float,
               n_max: int) -> np.ndarray:
    """Index matrix [n_centroids, n_max] of neighbors within ``radius``.

    Neighbors are ordered nearest first (ties by index) and include the
    centroid itself at distance zero.  Rows with fewer than ``n_max``
    neighbors are padded by repeating the centroid index, so downstream
    pooling sees a duplicated center rather than garbage.
    """
    pts = _check_points(points)
    cents = np.asarray(centroids, dtype=np.int64)
    if radius <= 0.0:
        raise DataError("grouping radius must be positive")
    if n_max < 1:
        raise DataError("n_max must be >= 1")
    r2 = radius * radius
    out = np.empty((cents.shape[0], n_max), dtype=np.int64)
    idx_all = np.arange(pts.shape[0])
    for row, c in enumerate(cents):
        diff = pts - pts[c]
        d2 = np.sum(diff * diff, axis=1)
        inside = idx_all[d2 <= r2]
        order = np.lexsort((inside, d2[inside]))
        chosen = inside[order][:n_max]
        out[row, :chosen.shape[0]] = chosen
        out[row, chosen.shape[0]:] = c
    return out


def grouped_relative(points: np.ndarray, scale: ScaleConfig) -> np.ndarray:
    """Centroid-relative neighborhood coordinates [M, n_max, 3] for one frame."""
    pts = _check_points(points)
    cents = farthest_point_sample(pts, scale.sample_count)
    groups = ball_group(pts, cents, scale.radius, scale.max_neighbors)
    return pts[groups] - pts[cents][:, None, :]


def point_mlp(rel: Tensor, params: dict, prefix: str) -> Tensor:
    """Shared two-layer ReLU MLP applied to every point of [..., n, c]."""
    *lead, n, c = rel.shape
    flat = reshape(rel, (int(np.prod(lead)) * n, c)) if lead else reshape(rel, (n, c))
    h = relu(linear(flat, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    h = relu(linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"]))
    d = h.shape[-1]
    return reshape(h, (*lead, n, d))


def set_abstraction(points: np.ndarray, scale: ScaleConfig, params: dict,
                    prefix: str, features: np.ndarray | None = None) -> Tensor:
    """Sample centroids, group neighborhoods, embed, and max-pool.

    Returns a [M, d] tensor of per-centroid features where
    ``M = min(scale.sample_count, N)``.  Input coordinates enter only as
    centroid-relative offsets, so translating the whole frame leaves the
    output unchanged up to rounding.
    """
    pts = _check_points(points)
    cents = farthest_point_sample(pts, scale.sample_count)
    groups = ball_group(pts, cents, scale.radius, scale.max_neighbors)
    rel = pts[groups] - pts[cents][:, None, :]
    if features is not None:
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape[0] != pts.shape[0]:
            raise DataError("features must align with points")
        rel = np.concatenate([rel, feats[groups]], axis=-1)
    embedded = point_mlp(Tensor(rel), params, prefix)
    return max_reduce(embedded, axis=1)


def set_abstraction_batch(rel_batch: np.ndarray, params: dict, prefix: str) -> Tensor:
    """Pooled features for precomputed relative neighborhoods [T, M, n, c]."""
    embedded = point_mlp(Tensor(rel_batch), params, prefix)
    return max_reduce(embedded, axis=2)

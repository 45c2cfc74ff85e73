"""Event sampling and aggregation: uniform sampling and batched K-Means++.

Clustering runs separately per polarity in a normalized 3D feature space
(fx = x/W, fy = y/H, ft = time scaled to [0, 1] over the polarity subset's
span). Cluster counts per polarity follow the event-count proportions. Seed
centers come from a batched K-Means++ initialization: candidates are drawn
in batches of B with probability proportional to the maintained squared
min-distance D2, and D2 is refreshed against newly added centers only.
Lloyd iterations then refine the centers. Each output event is a cluster
center, denormalized and quantized back to sensor coordinates, weighted by
its member count rho; the two polarity outputs are merged and time-sorted.

Candidate-draw protocol (pinned so a sequential oracle can reproduce it
from the same random stream): the first center is `rng.integers(N)`; every
subsequent candidate consumes exactly one `rng.random()` scalar u and picks
the index found by searchsorted over the cumulative D2 weights at
u * total. Within a batch, candidates are drawn without replacement (a
drawn index's weight is zeroed for the rest of the batch). If every weight
is zero (coincident points), the draw falls back to `rng.integers` over the
not-yet-chosen indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import (
    EventStream,
    SensorGeometry,
    WeightedEventStream,
    sort_by_time,
)


@dataclass(frozen=True)
class ClusterConfig:
    """Target count L, candidate batch size B, Lloyd caps, and the seed."""

    L: int
    B: int = 64
    I_max: int = 20
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.L < 1 or self.B < 1 or self.I_max < 1:
            raise ValueError("L, B, and I_max must all be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


def random_sample(stream: EventStream, L: int, rng) -> EventStream:
    """Uniform without-replacement sample of L events, kept in time order."""
    n = len(stream)
    if L < 0:
        raise ValueError("L must be non-negative")
    if n <= L:
        return sort_by_time(stream)
    idx = np.sort(rng.choice(n, L, replace=False))
    return stream.take(idx)


def allocate_counts(n0: int, n1: int, L: int) -> tuple[int, int]:
    """Split L cluster slots over the polarities proportionally to counts."""
    n = n0 + n1
    if n < 1:
        raise ValueError("both polarities empty")
    if L < 1:
        raise ValueError("L must be >= 1")
    if L > n:
        raise ValueError(f"cannot allocate {L} clusters over {n} events")
    raw = n0 / n * L
    l0 = int(np.sign(raw) * np.floor(np.abs(raw) + 0.5))  # round half away from zero
    l0 = max(l0, L - n1)
    l0 = min(l0, L, n0)
    return l0, L - l0


def normalize_points(stream: EventStream, geom: SensorGeometry) -> np.ndarray:
    """Map events to (fx, fy, ft) rows; ft is 0 when all timestamps agree."""
    n = len(stream)
    pts = np.empty((n, 3), np.float64)
    pts[:, 0] = stream.x / geom.width
    pts[:, 1] = stream.y / geom.height
    if n:
        t = stream.t.astype(np.float64)
        span = t[-1] - t[0]
        pts[:, 2] = (t - t[0]) / span if span > 0 else 0.0
    return pts


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared euclidean distances, shape (N, K)."""
    d2 = (points ** 2).sum(1)[:, None] - 2.0 * points @ centers.T + (centers ** 2).sum(1)
    return np.maximum(d2, 0.0)


def batched_kmeanspp_init(points: np.ndarray, K: int, B: int, rng) -> np.ndarray:
    """Batched K-Means++ seeding; returns K center rows copied from points."""
    n = len(points)
    if K > n:
        raise ValueError(f"K={K} exceeds point count {n}")
    if K < 1:
        raise ValueError("K must be >= 1")
    chosen = np.zeros(n, bool)
    centers = np.empty((K, points.shape[1]), points.dtype)
    first = int(rng.integers(n))
    centers[0] = points[first]
    chosen[first] = True
    d2 = _sq_dists(points, centers[:1])[:, 0]
    count = 1
    while count < K:
        m = min(B, K - count)
        weights = d2.copy()
        batch_idx = []
        for _ in range(m):
            total = weights.sum()
            if total > 0.0:
                u = rng.random()
                cum = np.cumsum(weights)
                idx = int(np.searchsorted(cum, u * total, side="right"))
                idx = min(idx, n - 1)
            else:
                remaining = np.nonzero(~chosen)[0]
                idx = int(remaining[rng.integers(len(remaining))])
            weights[idx] = 0.0
            chosen[idx] = True
            batch_idx.append(idx)
        new = points[batch_idx]
        centers[count:count + m] = new
        d2 = np.minimum(d2, _sq_dists(points, new).min(1))
        count += m
    return centers


def sequential_kmeanspp_init(points: np.ndarray, K: int, rng) -> np.ndarray:
    """Classic sequential K-Means++ seeding under the same draw protocol.

    Kept as the reference implementation: batched init at B=1 must
    reproduce it exactly from an identical random stream.
    """
    n = len(points)
    if K > n:
        raise ValueError(f"K={K} exceeds point count {n}")
    centers = np.empty((K, points.shape[1]), points.dtype)
    chosen = np.zeros(n, bool)
    first = int(rng.integers(n))
    centers[0] = points[first]
    chosen[first] = True
    d2 = _sq_dists(points, centers[:1])[:, 0]
    for k in range(1, K):
        total = d2.sum()
        if total > 0.0:
            u = rng.random()
            idx = int(np.searchsorted(np.cumsum(d2), u * total, side="right"))
            idx = min(idx, n - 1)
        else:
            remaining = np.nonzero(~chosen)[0]
            idx = int(remaining[rng.integers(len(remaining))])
        centers[k] = points[idx]
        chosen[idx] = True
        d2 = np.minimum(d2, _sq_dists(points, centers[k:k + 1])[:, 0])
    return centers


def lloyd(points: np.ndarray, centers: np.ndarray, I_max: int,
          tol: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Lloyd refinement; returns (centers, labels, iterations used).

    Empty clusters are re-seeded at the point farthest from its assigned
    center, so exactly K clusters always survive.
    """
    centers = np.array(centers, np.float64, copy=True)
    k = len(centers)
    if k < 1:
        raise ValueError("need at least one center")
    iterations = 0
    labels = np.zeros(len(points), np.int64)
    for _ in range(I_max):
        iterations += 1
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(1)
        counts = np.bincount(labels, minlength=k)
        empties = np.nonzero(counts == 0)[0]
        if len(empties):
            point_d2 = d2[np.arange(len(points)), labels]
            for e in empties:
                far = int(point_d2.argmax())
                centers[e] = points[far]
                labels[far] = e
                point_d2[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        new_centers = np.stack(
            [np.bincount(labels, weights=points[:, d], minlength=k)
             for d in range(points.shape[1])], axis=1)
        new_centers /= counts[:, None]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(1)).max()
        centers = new_centers
        if shift < tol:
            break
    labels = _sq_dists(points, centers).argmin(1)
    return centers, labels, iterations


def inertia(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Sum of squared distances of points to their assigned centers."""
    if len(labels) != len(points):
        raise ValueError("labels must match points")
    if len(labels) and (labels.min() < 0 or labels.max() >= len(centers)):
        raise ValueError("label out of range")
    diff = points - centers[labels]
    return float((diff ** 2).sum())


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def cluster_events(stream: EventStream, config: ClusterConfig,
                   geom: SensorGeometry, rng=None) -> WeightedEventStream:
    """Aggregate a stream into at most L weighted events via Algorithm-style
    per-polarity batched K-Means++ plus Lloyd refinement."""
    n = len(stream)
    if n == 0:
        raise ValueError("cannot cluster an empty stream")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    stream = sort_by_time(stream)
    if config.L >= n:
        return WeightedEventStream.from_events(stream)

    parts = []
    masks = [stream.p == 0, stream.p == 1]
    n0, n1 = int(masks[0].sum()), int(masks[1].sum())
    l0, l1 = allocate_counts(n0, n1, config.L)
    for polarity, mask, L_p in ((0, masks[0], l0), (1, masks[1], l1)):
        if L_p == 0:
            continue
        sub = stream.take(np.nonzero(mask)[0])
        pts = normalize_points(sub, geom)
        init = batched_kmeanspp_init(pts, L_p, config.B, rng)
        centers, labels, _ = lloyd(pts, init, config.I_max, config.tol)
        rho = np.bincount(labels, minlength=L_p).astype(np.uint32)
        t = sub.t.astype(np.float64)
        t0, span = t[0], t[-1] - t[0]
        cx = np.clip(_round_half_away(centers[:, 0] * geom.width), 0, geom.width - 1)
        cy = np.clip(_round_half_away(centers[:, 1] * geom.height), 0, geom.height - 1)
        ct = np.clip(_round_half_away(centers[:, 2] * span + t0), t0, t0 + span)
        parts.append(WeightedEventStream(cx.astype(np.uint16), cy.astype(np.uint16),
                                         ct.astype(np.int64),
                                         np.full(L_p, polarity, np.uint8), rho))
    merged = WeightedEventStream(
        np.concatenate([p.x for p in parts]),
        np.concatenate([p.y for p in parts]),
        np.concatenate([p.t for p in parts]),
        np.concatenate([p.p for p in parts]),
        np.concatenate([p.rho for p in parts]),
    )
    return sort_by_time(merged)

"""Slow, obviously-correct reference implementations used by the self-test and the test suite."""

from __future__ import annotations

from collections import deque

import numpy as np

from .core import Box3D, points_in_box


def bfs_components(centers: np.ndarray, radius: float) -> np.ndarray:
    """Component labels from breadth-first search; each visited node scans all others (O(K^2))."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    n = len(centers)
    labels = np.full(n, -1, dtype=np.int64)
    cur = 0
    for s in range(n):
        if labels[s] >= 0:
            continue
        labels[s] = cur
        q = deque([s])
        while q:
            u = q.popleft()
            dist = np.sqrt(((centers - centers[u]) ** 2).sum(axis=1))
            for v in np.flatnonzero((dist < radius) & (labels < 0)):
                labels[v] = cur
                q.append(v)
        cur += 1
    return labels


def same_partition(a, b) -> bool:
    """True when two label arrays induce the same partition, whatever the label values."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def pool_loop(F: np.ndarray, ids: np.ndarray, num_groups: int, kind: str) -> np.ndarray:
    """Per-group reduction with a plain Python loop over groups."""
    out = np.zeros((num_groups, F.shape[1]), dtype=F.dtype)
    for g in range(num_groups):
        rows = F[ids == g]
        if len(rows):
            out[g] = rows.max(axis=0) if kind == "max" else rows.mean(axis=0)
    return out


def iou_monte_carlo(a: Box3D, b: Box3D, n: int = 1_000_000, seed: int = 0) -> float:
    """IoU estimate from uniform samples in the union of both boxes' axis-aligned bounds."""
    rng = np.random.default_rng(seed)
    pts_lo, pts_hi = [], []
    for box in (a, b):
        c = box.bev_corners()
        pts_lo.append([c[:, 0].min(), c[:, 1].min(), box.center[2] - box.size[2] / 2])
        pts_hi.append([c[:, 0].max(), c[:, 1].max(), box.center[2] + box.size[2] / 2])
    lo = np.minimum(*pts_lo)
    hi = np.maximum(*pts_hi)
    p = rng.uniform(lo, hi, (n, 3))
    ia = points_in_box(p, a)
    ib = points_in_box(p, b)
    union = (ia | ib).sum()
    return float((ia & ib).sum() / union) if union else 0.0

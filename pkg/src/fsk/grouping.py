"""Vote-and-cluster instance grouping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynpool
from .core import GroupIndex, PointSet

DEFAULT_RADIUS = 0.6
DEFAULT_FG_THRESHOLD = 0.5


@dataclass
class VoteOutput:
    foreground_prob: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.foreground_prob = np.asarray(self.foreground_prob, dtype=np.float64).reshape(-1)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        p = self.foreground_prob
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("foreground probabilities must be finite and within [0, 1]")
        if len(self.offsets) != len(p):
            raise ValueError("offsets and probabilities disagree in length")


class UnionFind:
    """Disjoint sets with path compression and union by rank."""

    def __init__(self, n: int):
        self._parent = list(range(n))
        self._rank = [0] * n

    @property
    def parent(self) -> np.ndarray:
        return np.array(self._parent, dtype=np.int64)

    @property
    def rank(self) -> np.ndarray:
        return np.array(self._rank, dtype=np.int64)

    def find(self, x: int) -> int:
        parent = self._parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        rank = self._rank
        if rank[ra] < rank[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if rank[ra] == rank[rb]:
            rank[ra] += 1
        return ra

    def labels(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self._parent))], dtype=np.int64)


def vote_centers(points: PointSet, votes: VoteOutput, fg_threshold: float = DEFAULT_FG_THRESHOLD):
    if len(votes.foreground_prob) != len(points):
        raise ValueError("votes are not sized to the point set")
    mask = votes.foreground_prob >= fg_threshold
    return mask, points.coords[mask] + votes.offsets[mask]


_NEIGHBOR_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
     if (dx, dy, dz) > (0, 0, 0)], dtype=np.int64)  # 13 half-space offsets


def _cell_pairs(order: np.ndarray, starts: np.ndarray, counts: np.ndarray,
                ca: np.ndarray, cb: np.ndarray, same: bool):
    """All member pairs between cells ``ca`` and ``cb`` (``same``: i<j inside one cell)."""
    na, nb = counts[ca], counts[cb]
    tot = na * nb
    if tot.sum() == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    rep = np.repeat(np.arange(len(ca)), tot)
    local = np.arange(tot.sum()) - np.repeat(np.cumsum(tot) - tot, tot)
    ia, ib = np.divmod(local, nb[rep])
    i = order[starts[ca[rep]] + ia]
    j = order[starts[cb[rep]] + ib]
    if same:
        keep = ia < ib
        i, j = i[keep], j[keep]
    return i, j


def radius_pairs(centers: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j) with ||c_i - c_j|| < radius, found through a hash grid of cell size ``radius``."""
    k = len(centers)
    if k < 2:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    cells = np.floor(centers / radius).astype(np.int64)
    cells -= cells.min(axis=0)
    dims = cells.max(axis=0) + 3
    code = ((cells[:, 0] + 1) * dims[1] + cells[:, 1] + 1) * dims[2] + cells[:, 2] + 1
    order = np.argsort(code, kind="stable")
    sorted_code = code[order]
    uniq, starts, counts = np.unique(sorted_code, return_index=True, return_counts=True)
    ii, jj = [], []
    cell_ids = np.arange(len(uniq))
    i, j = _cell_pairs(order, starts, counts, cell_ids, cell_ids, same=True)
    ii.append(i)
    jj.append(j)
    for off in _NEIGHBOR_OFFSETS:
        delta = (off[0] * dims[1] + off[1]) * dims[2] + off[2]
        target = uniq + delta
        pos = np.searchsorted(uniq, target)
        pos = np.minimum(pos, len(uniq) - 1)
        hit = uniq[pos] == target
        i, j = _cell_pairs(order, starts, counts, cell_ids[hit], pos[hit], same=False)
        ii.append(i)
        jj.append(j)
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    d2 = np.sum((centers[i] - centers[j]) ** 2, axis=1)
    keep = d2 < radius * radius
    return i[keep], j[keep]


def canonical_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber component labels 0..M-1 in order of each component's smallest member index."""
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(len(first), np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv.reshape(-1)], len(first)


def ccl_group(centers: np.ndarray, radius: float = DEFAULT_RADIUS) -> GroupIndex:
    """Connected components of the radius graph over voted centers."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(centers)):
        raise ValueError("voted centers contain non-finite values")
    k = len(centers)
    if k == 0:
        return GroupIndex(np.zeros(0, np.int64), 0)
    i, j = radius_pairs(centers, radius)
    uf = UnionFind(k)
    for a, b in zip(i.tolist(), j.tolist()):
        uf.union(a, b)
    ids, m = canonical_labels(uf.labels())
    return GroupIndex(ids, m)


def lift_to_points(point_mask: np.ndarray, voted_groups: GroupIndex) -> GroupIndex:
    point_mask = np.asarray(point_mask, dtype=bool)
    if point_mask.sum() != len(voted_groups):
        raise ValueError("mask selects a different number of points than were grouped")
    ids = np.full(len(point_mask), -1, dtype=np.int64)
    ids[point_mask] = voted_groups.ids
    return GroupIndex(ids, voted_groups.num_groups)


def group_centers(centers: np.ndarray, groups: GroupIndex, chunk_size: int = dynpool.DEFAULT_CHUNK) -> np.ndarray:
    """Centroid of the voted centers of every group."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    return dynpool.pool(centers, dynpool.plan(groups, chunk_size), "avg").values


def group_points(points: PointSet, votes: VoteOutput, *, radius: float = DEFAULT_RADIUS,
                 fg_threshold: float = DEFAULT_FG_THRESHOLD):
    """Voting, CCL and lifting in one call. Returns (mask, voted centers, voted groups, point groups)."""
    mask, centers = vote_centers(points, votes, fg_threshold)
    voted = ccl_group(centers, radius)
    return mask, centers, voted, lift_to_points(mask, voted)

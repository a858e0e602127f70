"""Super-sparse temporal input: residual point probing, skeleton sampling and max-age buffering."""

from __future__ import annotations

import csv
import io
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Box3D, PointSet, box_iou_3d, pack_keys, points_in_box, quantize, transform_points
from .synth import random_box

RESIDUAL, SKELETON = 0, 1
STRATEGIES = ("random", "object_fps", "voxel")
DEFAULT_BUDGET = 128
STATS_FIELDS = ["frame", "n_total", "n_residual", "n_skeleton", "residual_ratio", "n_predictions", "latency_ms"]


@dataclass(frozen=True)
class RppConfig:
    qsize: tuple[float, float, float] = (0.25, 0.25, 0.4)
    num_base_frames: int = 5
    max_age: int = 2

    def __post_init__(self):
        if len(self.qsize) != 3 or any(q <= 0 for q in self.qsize):
            raise ValueError(f"qsize must be 3 positive values, got {self.qsize}")
        if self.num_base_frames < 1:
            raise ValueError("num_base_frames must be >= 1")
        if self.max_age < 1:
            raise ValueError("max_age must be >= 1")


@dataclass
class AgedPoints:
    points: PointSet
    birth_frame: np.ndarray
    age: np.ndarray

    def __post_init__(self):
        self.birth_frame = np.asarray(self.birth_frame, dtype=np.int64).reshape(-1)
        self.age = np.asarray(self.age, dtype=np.int64).reshape(-1)
        if not (len(self.points) == len(self.birth_frame) == len(self.age)):
            raise ValueError("per-point arrays must match the point count")
        if np.any(self.age < 1):
            raise ValueError("ages start at 1")

    def __len__(self):
        return len(self.points)

    @staticmethod
    def empty() -> "AgedPoints":
        return AgedPoints(PointSet.empty(), np.zeros(0, np.int64), np.zeros(0, np.int64))


@dataclass
class SuperSparseInput:
    residual: AgedPoints
    skeleton: PointSet

    @property
    def provenance(self) -> np.ndarray:
        return np.concatenate([np.full(len(self.residual), RESIDUAL, np.int8),
                               np.full(len(self.skeleton), SKELETON, np.int8)])

    def points(self) -> PointSet:
        return PointSet.concat([self.residual.points, self.skeleton])

    def __len__(self):
        return len(self.residual) + len(self.skeleton)


# -- residual points probing ----------------------------------------------------

def _occupied(base_frames, qsize) -> np.ndarray:
    keys = [quantize(b, qsize) for b in base_frames if len(b)]
    if not keys:
        return pack_keys(np.zeros((0, 3), np.int64))
    return np.unique(pack_keys(np.concatenate(keys)))


def residual_mask(current: PointSet, base_frames: Sequence[PointSet], cfg: RppConfig = RppConfig()) -> np.ndarray:
    if len(base_frames) > cfg.num_base_frames:
        raise ValueError(f"got {len(base_frames)} base frames, config allows {cfg.num_base_frames}")
    if len(current) == 0:
        return np.zeros(0, dtype=bool)
    cur = pack_keys(quantize(current, cfg.qsize))
    return ~np.isin(cur, _occupied(base_frames, cfg.qsize))


def rpp(current: PointSet, base_frames: Sequence[PointSet], cfg: RppConfig = RppConfig()) -> PointSet:
    """Points of ``current`` whose voxel no base-frame point occupies."""
    return current.subset(np.flatnonzero(residual_mask(current, base_frames, cfg)))


def rpp_bruteforce(current: PointSet, base_frames: Sequence[PointSet], cfg: RppConfig = RppConfig()) -> np.ndarray:
    q = np.asarray(cfg.qsize, dtype=np.float64)
    occupied = set()
    for b in base_frames:
        for p in b.coords:
            occupied.add(tuple(int(v) for v in np.floor(p / q)))
    return np.array([tuple(int(v) for v in np.floor(p / q)) not in occupied for p in current.coords], dtype=bool)


# -- skeleton sampling ------------------------------------------------------------

def farthest_point_sample(coords: np.ndarray, k: int, start: int) -> np.ndarray:
    n = len(coords)
    k = min(k, n)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    d = np.linalg.norm(coords - coords[start], axis=1)
    for i in range(1, k):
        nxt = int(d.argmax())
        chosen[i] = nxt
        d = np.minimum(d, np.linalg.norm(coords - coords[nxt], axis=1))
    return chosen


def _voxel_centroids(coords: np.ndarray, qsize) -> np.ndarray:
    keys = quantize(coords, qsize)
    # lexicographic voxel key order
    order = np.lexsort(keys.T[::-1])
    _, first, inv = np.unique(keys[order], axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(first), 3))
    np.add.at(sums, inv, coords[order])
    return sums / np.bincount(inv)[:, None]


def skeleton_sample(prev_points: PointSet, prev_boxes: Sequence[Box3D], strategy: str = "random",
                    budget_per_box: int = DEFAULT_BUDGET, seed: int = 0,
                    qsize=RppConfig().qsize) -> PointSet:
    """Sample at most ``budget_per_box`` points from the interior of each previous box."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if budget_per_box < 1:
        raise ValueError("budget_per_box must be >= 1")
    rng = np.random.default_rng(seed)
    parts = []
    for box in prev_boxes:
        idx = np.flatnonzero(points_in_box(prev_points.coords, box))
        if len(idx) == 0:
            continue
        if len(idx) <= budget_per_box:
            parts.append(prev_points.subset(idx))
            continue
        pts = prev_points.coords[idx]
        if strategy == "random":
            sel = np.sort(rng.choice(idx, budget_per_box, replace=False))
            parts.append(prev_points.subset(sel))
        elif strategy == "object_fps":
            start = int(np.linalg.norm(pts - np.asarray(box.center), axis=1).argmin())
            parts.append(prev_points.subset(idx[farthest_point_sample(pts, budget_per_box, start)]))
        else:
            cents = _voxel_centroids(pts, qsize)
            if len(cents) > budget_per_box:
                cents = cents[:budget_per_box]
            stamps = None
            if prev_points.timestamps is not None:
                stamps = np.full(len(cents), prev_points.timestamps[idx].max(), dtype=np.int64)
            parts.append(PointSet(cents, None, stamps))
    if not parts:
        return PointSet.empty()
    return PointSet.concat(parts)


# -- max-age buffer -------------------------------------------------------------

def age_update(buffer: AgedPoints, new_residual: PointSet, frame: int, cfg: RppConfig = RppConfig()) -> AgedPoints:
    """Age existing entries by one frame, evict those past max_age, append the new residual at age 1."""
    age = buffer.age + 1
    keep = np.flatnonzero(age <= cfg.max_age)
    n = len(new_residual)
    pts = PointSet.concat([buffer.points.subset(keep), new_residual]) if len(keep) else new_residual
    return AgedPoints(pts,
                      np.concatenate([buffer.birth_frame[keep], np.full(n, frame, np.int64)]),
                      np.concatenate([age[keep], np.ones(n, np.int64)]))


def assemble(buffer: AgedPoints, skeleton: PointSet) -> SuperSparseInput:
    return SuperSparseInput(buffer, skeleton)


# -- sequence runner --------------------------------------------------------------

@dataclass(frozen=True)
class SeedNoise:
    drop: float = 0.0
    insert: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.drop <= 1 and 0 <= self.insert <= 1):
            raise ValueError("noise probabilities must lie in [0, 1]")


@dataclass
class FrameStats:
    frame: int
    n_total: int
    n_residual: int
    n_skeleton: int
    residual_ratio: float
    n_predictions: int
    latency_ms: float


@dataclass
class SequenceResult:
    predictions: list = field(default_factory=list)  # per frame: list of proposals, ego frame
    stats: list[FrameStats] = field(default_factory=list)
    inputs: list[int] = field(default_factory=list)  # detector input size per frame

    def stats_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STATS_FIELDS)
        for s in self.stats:
            w.writerow([s.frame, s.n_total, s.n_residual, s.n_skeleton, f"{s.residual_ratio:.6f}",
                        s.n_predictions, f"{s.latency_ms:.3f}"])
        return buf.getvalue()


def _noisy_seed(boxes, points: PointSet, noise: SeedNoise | None, size_range=None):
    if noise is None or (noise.drop == 0 and noise.insert == 0):
        return list(boxes)
    rng = np.random.default_rng(noise.seed)
    out = [b for b in boxes if not rng.random() < noise.drop]
    n_ins = int(round(noise.insert * len(boxes)))
    if n_ins and len(points):
        lo, hi = points.coords.min(axis=0), points.coords.max(axis=0)
        if size_range is None:
            sizes = np.array([b.size for b in boxes])
            size_range = (sizes.min(axis=0), sizes.max(axis=0) + 1e-6)
        out += [random_box(rng, tuple(zip(lo, hi)), *size_range) for _ in range(n_ins)]
    return out


def run_sequence(frames: Sequence[PointSet], poses: Sequence[np.ndarray] | None,
                 detector: Callable[[PointSet, int], list], cfg: RppConfig = RppConfig(), *,
                 keyframe_gap: int | None = None, noise: SeedNoise | None = None,
                 strategy: str = "random", budget_per_box: int = DEFAULT_BUDGET, seed: int = 0) -> SequenceResult:
    """Run the detector over a sequence on super-sparse inputs.

    ``frames`` are in their own ego coordinates and ``poses`` map ego to world.
    ``detector(points, frame_index)`` returns proposals in the ego frame it was given.
    """
    if poses is None or len(poses) != len(frames):
        raise ValueError("an ego pose is required for every frame")
    if keyframe_gap is not None and keyframe_gap < 1:
        raise ValueError("keyframe_gap must be >= 1")
    result = SequenceResult()
    base: deque[PointSet] = deque(maxlen=cfg.num_base_frames)  # world coordinates
    buffer = AgedPoints.empty()  # world coordinates
    prev_world: PointSet | None = None
    prev_boxes_world: list[Box3D] = []
    for t, (pts, pose) in enumerate(zip(frames, poses)):
        pose = np.asarray(pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise ValueError(f"frame {t}: pose must be 4x4")
        inv = np.linalg.inv(pose)
        world = PointSet(transform_points(pts.coords, pose), pts.features, pts.timestamps)
        t0 = time.perf_counter()
        in_ego = [PointSet(transform_points(b.coords, inv)) for b in base]
        residual = pts.subset(np.flatnonzero(residual_mask(pts, in_ego, cfg)))
        buffer = age_update(buffer, PointSet(transform_points(residual.coords, pose)), t, cfg)
        full = t == 0 or (keyframe_gap is not None and t % keyframe_gap == 0)
        if full:
            n_skel = 0
            preds = detector(pts, t)
            n_in = len(pts)
        else:
            skel_world = skeleton_sample(prev_world, prev_boxes_world, strategy, budget_per_box,
                                         seed + t, cfg.qsize)
            n_skel = len(skel_world)
            buf_ego = AgedPoints(PointSet(transform_points(buffer.points.coords, inv)),
                                 buffer.birth_frame, buffer.age)
            sparse = assemble(buf_ego, PointSet(transform_points(skel_world.coords, inv)))
            preds = detector(sparse.points(), t)
            n_in = len(sparse)
        latency = (time.perf_counter() - t0) * 1e3
        boxes_world = [p.box.transformed(pose) for p in preds]
        if t == 0:
            boxes_world = _noisy_seed(boxes_world, world, noise)
        prev_world, prev_boxes_world = world, boxes_world
        base.append(world)
        result.predictions.append(preds)
        result.inputs.append(n_in)
        n = len(pts)
        result.stats.append(FrameStats(t, n, len(residual), n_skel, len(residual) / n if n else 0.0,
                                       len(preds), latency))
    return result


# -- evaluation ---------------------------------------------------------------------

def match(preds, gts, iou_threshold: float = 0.5) -> np.ndarray:
    """Greedy one-to-one matching; returns per-gt matched flags."""
    boxes = [p.box if hasattr(p, "box") else p for p in preds]
    hit = np.zeros(len(gts), dtype=bool)
    used = np.zeros(len(boxes), dtype=bool)
    for g, gt in enumerate(gts):
        best, bi = iou_threshold, -1
        for j, b in enumerate(boxes):
            if used[j]:
                continue
            iou = box_iou_3d(b, gt)
            if iou >= best:
                best, bi = iou, j
        if bi >= 0:
            hit[g] = True
            used[bi] = True
    return hit


def recall(preds, gts, iou_threshold: float = 0.5) -> float:
    if not gts:
        return 1.0
    return float(match(preds, gts, iou_threshold).mean())

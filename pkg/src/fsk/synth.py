"""Synthetic scenes, sequences, an oracle detector and pooling workloads."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Box3D, GroupIndex, PointSet, make_pose, points_in_box, transform_points
from .sir.boxes import Proposal


@dataclass(frozen=True)
class SceneObject:
    box: Box3D
    points: int
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    appear_frame: int = 0

    def box_at(self, frame: int) -> Box3D:
        return self.box.translated(np.asarray(self.velocity) * frame)


@dataclass(frozen=True)
class SceneSpec:
    bounds: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    n_background: int
    objects: tuple[SceneObject, ...] = ()
    rng_seed: int = 0
    ego_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ego_yaw_rate: float = 0.0
    # draw fresh object-surface samples every frame instead of rigid translation
    resample_objects: bool = False
    grid_jitter: float = 0.05

    def __post_init__(self):
        for obj in self.objects:
            if obj.points < 1:
                raise ValueError("points_per_object must be >= 1")
            lo = np.array([b[0] for b in self.bounds])
            hi = np.array([b[1] for b in self.bounds])
            c = np.asarray(obj.box.center)
            if np.any(c < lo) or np.any(c > hi):
                raise ValueError(f"object at {obj.box.center} lies outside the scene bounds")

    @staticmethod
    def from_dict(d: dict) -> "SceneSpec":
        allowed = {"bounds", "n_background", "objects", "rng_seed", "ego_velocity",
                   "ego_yaw_rate", "resample_objects", "grid_jitter"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        objs = []
        for o in d.get("objects", []):
            extra = set(o) - {"center", "size", "yaw", "points", "velocity", "appear_frame"}
            if extra:
                raise ValueError(f"unknown object keys: {sorted(extra)}")
            objs.append(SceneObject(
                Box3D(tuple(o["center"]), tuple(o["size"]), float(o.get("yaw", 0.0))),
                int(o["points"]),
                tuple(o.get("velocity", (0.0, 0.0, 0.0))),
                int(o.get("appear_frame", 0)),
            ))
        return SceneSpec(
            bounds=tuple(tuple(map(float, b)) for b in d["bounds"]),
            n_background=int(d["n_background"]),
            objects=tuple(objs),
            rng_seed=int(d.get("rng_seed", 0)),
            ego_velocity=tuple(map(float, d.get("ego_velocity", (0.0, 0.0, 0.0)))),
            ego_yaw_rate=float(d.get("ego_yaw_rate", 0.0)),
            resample_objects=bool(d.get("resample_objects", False)),
            grid_jitter=float(d.get("grid_jitter", 0.05)),
        )

    def to_dict(self) -> dict:
        return {
            "bounds": [list(b) for b in self.bounds],
            "n_background": self.n_background,
            "objects": [{"center": list(o.box.center), "size": list(o.box.size), "yaw": o.box.yaw,
                         "points": o.points, "velocity": list(o.velocity),
                         "appear_frame": o.appear_frame} for o in self.objects],
            "rng_seed": self.rng_seed,
            "ego_velocity": list(self.ego_velocity),
            "ego_yaw_rate": self.ego_yaw_rate,
            "resample_objects": self.resample_objects,
            "grid_jitter": self.grid_jitter,
        }


def load_scene(path) -> SceneSpec:
    return SceneSpec.from_dict(json.loads(Path(path).read_text()))


def _background(spec: SceneSpec) -> np.ndarray:
    """Ground points on a jittered grid, fixed in world coordinates."""
    n = spec.n_background
    if n == 0:
        return np.zeros((0, 3))
    (x0, x1), (y0, y1), _ = spec.bounds
    side = int(math.ceil(math.sqrt(n)))
    dx, dy = (x1 - x0) / side, (y1 - y0) / side
    i, j = np.divmod(np.arange(n), side)
    rng = np.random.default_rng([spec.rng_seed, 1])
    jit = rng.uniform(-spec.grid_jitter, spec.grid_jitter, size=(n, 3))
    pts = np.stack([x0 + (i + 0.5) * dx, y0 + (j + 0.5) * dy, np.zeros(n)], axis=1)
    return pts + jit


def _object_local(spec: SceneSpec, k: int, frame: int | None) -> np.ndarray:
    obj = spec.objects[k]
    key = [spec.rng_seed, 2, k] if frame is None else [spec.rng_seed, 3, k, frame]
    rng = np.random.default_rng(key)
    half = np.asarray(obj.box.size) / 2 * 0.95
    return rng.uniform(-half, half, size=(obj.points, 3))


def object_points_world(spec: SceneSpec, k: int, frame: int) -> np.ndarray:
    obj = spec.objects[k]
    local = _object_local(spec, k, frame if spec.resample_objects else None)
    box = obj.box_at(frame)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    return local @ rot.T + np.asarray(box.center)


def ego_pose(spec: SceneSpec, frame: int) -> np.ndarray:
    return make_pose(np.asarray(spec.ego_velocity) * frame, spec.ego_yaw_rate * frame)


@dataclass
class Frame:
    points: PointSet  # in the ego frame
    boxes: list[Box3D]  # in the ego frame
    pose: np.ndarray  # ego -> world
    object_ids: np.ndarray  # per point: object index or -1
    box_ids: list[int] = field(default_factory=list)  # object index of every box


def gen_frame(spec: SceneSpec, frame: int) -> Frame:
    """Points and gt boxes of one frame, expressed in that frame's ego coordinates."""
    if frame < 0:
        raise ValueError("frame must be >= 0")
    parts = [_background(spec)]
    owners = [np.full(len(parts[0]), -1)]
    boxes, box_ids = [], []
    for k, obj in enumerate(spec.objects):
        if frame < obj.appear_frame:
            continue
        pts = object_points_world(spec, k, frame)
        parts.append(pts)
        owners.append(np.full(len(pts), k))
        boxes.append(obj.box_at(frame))
        box_ids.append(k)
    world = np.concatenate(parts)
    pose = ego_pose(spec, frame)
    inv = np.linalg.inv(pose)
    coords = transform_points(world, inv)
    ego_boxes = [b.transformed(inv) for b in boxes]
    stamps = np.full(len(coords), frame, dtype=np.int64)
    return Frame(PointSet(coords, None, stamps), ego_boxes, pose, np.concatenate(owners), box_ids)


def gen_sequence(spec: SceneSpec, num_frames: int) -> list[Frame]:
    return [gen_frame(spec, t) for t in range(num_frames)]


def random_box(rng: np.random.Generator, bounds, size_lo, size_hi) -> Box3D:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    size = rng.uniform(size_lo, size_hi)
    center = rng.uniform(lo, hi)
    center[2] = size[2] / 2 + 0.2
    return Box3D(tuple(center), tuple(size), float(rng.uniform(-np.pi, np.pi)))


def oracle_detector(points: PointSet, gt_boxes, *, drop: float = 0.0, insert: float = 0.0,
                    rng: np.random.Generator | None = None, min_points: int = 1,
                    bounds=None, size_range=None):
    """Return gt boxes the given points support, with optional drop/insert noise.

    A gt box is reported when at least ``min_points`` input points fall inside
    it; inserted boxes need at least one interior point. Returns unit-score
    proposals.
    """
    if not (0 <= drop <= 1 and 0 <= insert <= 1):
        raise ValueError("noise probabilities must lie in [0, 1]")
    if (drop or insert) and rng is None:
        raise ValueError("an rng is required when noise is enabled")
    coords = points.coords
    out = []
    for b in gt_boxes:
        if drop and rng.random() < drop:
            continue
        if points_in_box(coords, b).sum() >= min_points:
            out.append(Proposal(b, 1.0, len(out)))
    n_ins = int(round(insert * len(gt_boxes)))
    if n_ins:
        if bounds is None:
            lo, hi = coords.min(axis=0), coords.max(axis=0)
            bounds = tuple(zip(lo, hi))
        if size_range is None:
            sizes = np.array([b.size for b in gt_boxes])
            size_range = (sizes.min(axis=0), sizes.max(axis=0) + 1e-6)
        for _ in range(n_ins):
            b = random_box(rng, bounds, *size_range)
            if points_in_box(coords, b).any():
                out.append(Proposal(b, 1.0, len(out)))
    return out


def frame_detector(frames, *, min_points: int = 1, drop: float = 0.0, insert: float = 0.0, seed: int = 0):
    """Pipeline callback ``(points, t)`` running the oracle detector against frame ``t``'s gt boxes."""
    def detect(points: PointSet, t: int):
        rng = np.random.default_rng([seed, t]) if (drop or insert) else None
        return oracle_detector(points, frames[t].boxes, drop=drop, insert=insert, rng=rng, min_points=min_points)
    return detect


def make_scene(rng_seed: int = 0, n_objects: int = 4, n_background: int = 2000,
               extent: float = 40.0, points_per_object: int = 40, speed: float = 0.0,
               min_gap: float = 3.0, ego_velocity=(0.0, 0.0, 0.0), ego_yaw_rate: float = 0.0,
               size_lo=(3.0, 1.6, 1.4), size_hi=(4.8, 2.2, 1.8), resample: bool = False,
               appear_frame: int = 0) -> SceneSpec:
    """Random well-separated scene: boxes keep at least ``min_gap`` meters between them."""
    rng = np.random.default_rng(rng_seed)
    bounds = ((-extent, extent), (-extent, extent), (-1.0, 5.0))
    objs: list[SceneObject] = []
    radii: list[float] = []
    attempts = 0
    while len(objs) < n_objects:
        attempts += 1
        if attempts > 10000:
            raise RuntimeError("could not place objects with the requested gap")
        size = rng.uniform(size_lo, size_hi)
        r = math.hypot(size[0], size[1]) / 2
        c = np.array([*rng.uniform(-extent * 0.8, extent * 0.8, 2), size[2] / 2 + 0.3])
        if any(np.hypot(*(c[:2] - np.asarray(o.box.center[:2]))) < r + ro + min_gap + 12 * speed
               for o, ro in zip(objs, radii)):
            continue
        heading = rng.uniform(-np.pi, np.pi)
        vel = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
        objs.append(SceneObject(Box3D(tuple(c), tuple(size), heading), points_per_object, vel, appear_frame))
        radii.append(r)
    return SceneSpec(bounds, n_background, tuple(objs), rng_seed,
                     tuple(ego_velocity), ego_yaw_rate, resample)


# -- pooling workloads ---------------------------------------------------------

@dataclass(frozen=True)
class WorkloadSpec:
    size_regime: tuple[int, int]
    feature_dim: int
    imbalanced: bool = False
    num_groups: int = 100

    def __post_init__(self):
        lo, hi = self.size_regime
        if lo < 1 or hi <= lo:
            raise ValueError(f"invalid size regime {self.size_regime}")


def workload_sizes(spec: WorkloadSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, spec.size_regime[0], spec.size_regime[1]])
    sizes = rng.integers(spec.size_regime[0], spec.size_regime[1], spec.num_groups)
    if spec.imbalanced:
        # one group in ten is enlarged 10x
        sizes[::10] *= 10
    return sizes


def gen_workload(spec: WorkloadSpec, seed: int = 0, dtype=np.float32):
    sizes = workload_sizes(spec, seed)
    rng = np.random.default_rng([seed, spec.feature_dim, int(spec.imbalanced)])
    ids = np.repeat(np.arange(spec.num_groups), sizes)
    rng.shuffle(ids)
    F = rng.standard_normal((len(ids), spec.feature_dim), dtype=dtype)
    return F, GroupIndex(ids, spec.num_groups)

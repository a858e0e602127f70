"""Domain types, oriented-box geometry and voxel quantization."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

BACKGROUND = -1


def _finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass
class PointSet:
    """N points with optional per-point features and integer frame stamps."""

    coords: np.ndarray
    features: np.ndarray | None = None
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        _finite(self.coords, "coords")
        n = len(self.coords)
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.ndim != 2 or len(self.features) != n:
                raise ValueError(f"features must be ({n}, C), got {self.features.shape}")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
            if len(self.timestamps) != n:
                raise ValueError("timestamps length does not match coords")

    def __len__(self) -> int:
        return len(self.coords)

    def subset(self, idx) -> "PointSet":
        return PointSet(
            self.coords[idx],
            None if self.features is None else self.features[idx],
            None if self.timestamps is None else self.timestamps[idx],
        )

    @staticmethod
    def empty(num_features: int | None = None) -> "PointSet":
        feats = None if num_features is None else np.zeros((0, num_features))
        return PointSet(np.zeros((0, 3)), feats, np.zeros(0, np.int64))

    @staticmethod
    def concat(parts: Sequence["PointSet"]) -> "PointSet":
        parts = list(parts)
        if not parts:
            return PointSet.empty()
        coords = np.concatenate([p.coords for p in parts])
        feats = None
        if all(p.features is not None for p in parts):
            feats = np.concatenate([p.features for p in parts])
        stamps = None
        if all(p.timestamps is not None for p in parts):
            stamps = np.concatenate([p.timestamps for p in parts])
        return PointSet(coords, feats, stamps)


@dataclass
class GroupIndex:
    """Per-point group ids; -1 marks background."""

    ids: np.ndarray
    num_groups: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.num_groups = int(self.num_groups)
        if self.num_groups < 0:
            raise ValueError("num_groups must be >= 0")
        if len(self.ids) and (self.ids.min() < BACKGROUND or self.ids.max() >= self.num_groups):
            raise ValueError(f"group ids must lie in [-1, {self.num_groups})")

    def __len__(self) -> int:
        return len(self.ids)

    def sizes(self) -> np.ndarray:
        fg = self.ids[self.ids >= 0]
        return np.bincount(fg, minlength=self.num_groups)


@dataclass
class GroupFeatures:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError("group features must be an (M, C) matrix")

    @property
    def num_groups(self) -> int:
        return self.values.shape[0]


def normalize_yaw(yaw):
    """Wrap angles into (-pi, pi]."""
    y = np.mod(np.asarray(yaw, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y <= -np.pi, y + 2 * np.pi, y)
    return float(y) if np.ndim(y) == 0 else y


@dataclass(frozen=True)
class Box3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.size)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("center and size need three components")
        if not all(math.isfinite(v) for v in c + s + (float(self.yaw),)):
            raise ValueError("box parameters must be finite")
        if min(s) <= 0:
            raise ValueError(f"box size must be positive, got {s}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    def as_array(self) -> np.ndarray:
        return np.array([*self.center, *self.size, self.yaw])

    @staticmethod
    def from_array(a) -> "Box3D":
        a = np.asarray(a, dtype=np.float64)
        return Box3D(tuple(a[:3]), tuple(a[3:6]), float(a[6]))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]

    def translated(self, delta) -> "Box3D":
        return Box3D(tuple(np.add(self.center, delta)), self.size, self.yaw)

    def transformed(self, pose: np.ndarray) -> "Box3D":
        """Apply a 4x4 rigid transform whose rotation is about z."""
        c = pose[:3, :3] @ np.asarray(self.center) + pose[:3, 3]
        dyaw = math.atan2(pose[1, 0], pose[0, 0])
        return Box3D(tuple(c), self.size, self.yaw + dyaw)

    def bev_corners(self) -> np.ndarray:
        """Counter-clockwise BEV corners, shape (4, 2)."""
        l, w = self.size[0] / 2, self.size[1] / 2
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center[:2])


def to_box_frame(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Express points in the box's yaw-canonical frame."""
    d = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] + s * d[:, 1]
    out[:, 1] = -s * d[:, 0] + c * d[:, 1]
    out[:, 2] = d[:, 2]
    return out


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    local = to_box_frame(points, box)
    half = np.asarray(box.size) / 2
    return np.all(np.abs(local) <= half, axis=1)


def point_in_box(p, box: Box3D) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64).reshape(1, 3), box)[0])


def points_in_boxes(points: np.ndarray, boxes: Sequence[Box3D]) -> np.ndarray:
    """Membership matrix of shape (N, B)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((len(points), len(boxes)), dtype=bool)
    for j, b in enumerate(boxes):
        out[:, j] = points_in_box(points, b)
    return out


# -- BEV polygon clipping ----------------------------------------------------

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by a convex CCW ``clipper``."""
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        inp, output = output, []
        prev = inp[-1]
        prev_in = _cross(a, b, prev) >= 0
        for cur in inp:
            cur_in = _cross(a, b, cur) >= 0
            if cur_in != prev_in:
                # segment prev->cur crosses line a->b
                d1 = _cross(a, b, prev)
                d2 = _cross(a, b, cur)
                t = d1 / (d1 - d2)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def box_iou_3d(a: Box3D, b: Box3D) -> float:
    z_lo = max(a.center[2] - a.size[2] / 2, b.center[2] - b.size[2] / 2)
    z_hi = min(a.center[2] + a.size[2] / 2, b.center[2] + b.size[2] / 2)
    dz = z_hi - z_lo
    if dz <= 0:
        return 0.0
    # cheap circumscribed-circle rejection
    ra = math.hypot(a.size[0], a.size[1]) / 2
    rb = math.hypot(b.size[0], b.size[1]) / 2
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    inter_area = polygon_area(clip_polygon(a.bev_corners(), b.bev_corners()))
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


# -- voxel quantization -------------------------------------------------------

class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int


def quantize_coords(coords: np.ndarray, qsize) -> np.ndarray:
    """Integer voxel keys of shape (N, 3) via floor division."""
    q = np.asarray(qsize, dtype=np.float64).reshape(3)
    if np.any(q <= 0):
        raise ValueError("quantization sizes must be positive")
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    _finite(coords, "coords")
    return np.floor(coords / q).astype(np.int64)


def quantize(points: PointSet | np.ndarray, qsize) -> np.ndarray:
    coords = points.coords if isinstance(points, PointSet) else points
    return quantize_coords(coords, qsize)


def voxel_keys(points: PointSet | np.ndarray, qsize) -> list[VoxelKey]:
    return [VoxelKey(*map(int, k)) for k in quantize(points, qsize)]


def voxel_centers(coords: np.ndarray, vsize) -> np.ndarray:
    v = np.asarray(vsize, dtype=np.float64).reshape(3)
    return (quantize_coords(coords, v) + 0.5) * v


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Collapse (N, 3) int keys to a 1-D structured view usable with np.isin/unique."""
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    return keys.view([("x", np.int64), ("y", np.int64), ("z", np.int64)]).reshape(-1)


# -- poses --------------------------------------------------------------------

def make_pose(translation=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    pose = np.eye(4)
    pose[:2, :2] = [[c, -s], [s, c]]
    pose[:3, 3] = translation
    return pose


def transform_points(coords: np.ndarray, pose: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    return coords @ pose[:3, :3].T + pose[:3, 3]


def relative_pose(src_pose: np.ndarray, dst_pose: np.ndarray) -> np.ndarray:
    """Transform mapping coordinates in ``src`` ego frame into ``dst`` ego frame."""
    return np.linalg.inv(dst_pose) @ src_pose


# -- point cloud files --------------------------------------------------------

_FSPC_MAGIC = b"FSPC"


def write_fspc(path, points: PointSet) -> None:
    feats = points.features
    c = 0 if feats is None else feats.shape[1]
    with open(path, "wb") as f:
        f.write(_FSPC_MAGIC)
        f.write(struct.pack("<III", 1, len(points), c))
        f.write(points.coords.astype("<f4").tobytes())
        if c:
            f.write(np.asarray(feats).astype("<f4").tobytes())


def read_fspc(path) -> PointSet:
    data = Path(path).read_bytes()
    if data[:4] != _FSPC_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    version, n, c = struct.unpack_from("<III", data, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 16
    need = off + 4 * n * (3 + c)
    if len(data) < need:
        raise ValueError(f"{path}: truncated ({len(data)} < {need} bytes)")
    coords = np.frombuffer(data, "<f4", n * 3, off).reshape(n, 3).astype(np.float64)
    feats = None
    if c:
        feats = np.frombuffer(data, "<f4", n * c, off + 12 * n).reshape(n, c).astype(np.float64)
    return PointSet(coords, feats)


def write_csv(path, points: PointSet) -> None:
    c = 0 if points.features is None else points.features.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "z"] + [f"f{i}" for i in range(c)])
        for i in range(len(points)):
            row = list(points.coords[i])
            if c:
                row += list(points.features[i])
            w.writerow([repr(float(v)) for v in row])


def read_csv(path) -> PointSet:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    if header[:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: header must start with x,y,z")
    arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    feats = arr[:, 3:] if len(header) > 3 else None
    return PointSet(arr[:, :3], feats)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsk.core import (Box3D, GroupIndex, PointSet, box_iou_3d, clip_polygon, make_pose, normalize_yaw,
                      point_in_box, points_in_box, polygon_area, quantize, read_csv, read_fspc,
                      relative_pose, to_box_frame, transform_points, voxel_keys, write_csv, write_fspc)
from fsk.oracles import iou_monte_carlo

CUBE = Box3D((0, 0, 0), (2, 2, 2), 0.0)


def test_point_in_box_examples():
    assert point_in_box((0, 0, 0), CUBE)
    assert point_in_box((1.0, 0, 0), Box3D((0, 0, 0), (2, 2, 2), math.pi / 2))
    assert not point_in_box((1.5, 0, 0), CUBE)


def test_points_in_rotated_box():
    b = Box3D((1, 2, 0), (4, 1, 1), math.pi / 4)
    along = np.array([1, 2, 0]) + np.array([1.2, 1.2, 0])  # on the long axis
    across = np.array([1, 2, 0]) + np.array([1.2, -1.2, 0])
    assert points_in_box(np.stack([along, across]), b).tolist() == [True, False]


def test_yaw_normalized():
    assert Box3D((0, 0, 0), (1, 1, 1), 3 * math.pi).yaw == pytest.approx(math.pi)
    assert Box3D((0, 0, 0), (1, 1, 1), -math.pi).yaw == pytest.approx(math.pi)
    y = normalize_yaw(np.linspace(-10, 10, 101))
    assert np.all(y > -math.pi) and np.all(y <= math.pi)


def test_box_rejects_bad_values():
    with pytest.raises(ValueError):
        Box3D((0, 0, 0), (1, 0, 1))
    with pytest.raises(ValueError):
        Box3D((0, np.nan, 0), (1, 1, 1))


def test_iou_examples():
    assert box_iou_3d(CUBE, CUBE) == pytest.approx(1.0)
    assert box_iou_3d(CUBE, Box3D((100, 0, 0), (2, 2, 2))) == 0.0
    assert abs(box_iou_3d(CUBE, Box3D((1, 0, 0), (2, 2, 2))) - 1 / 3) < 1e-9


def test_iou_rotated_square_analytic():
    # square rotated 45 degrees inside an axis-aligned square of the same size:
    # overlap is an octagon of area 8(sqrt2 - 1) for side 2
    b = Box3D((0, 0, 0), (2, 2, 2), math.pi / 4)
    inter = 8 * (math.sqrt(2) - 1)
    assert box_iou_3d(CUBE, b) == pytest.approx(inter / (8 - inter), abs=1e-12)


def test_iou_against_monte_carlo(rng):
    for _ in range(5):
        a = Box3D(rng.uniform(-1, 1, 3), rng.uniform(0.5, 3, 3), rng.uniform(-3, 3))
        b = Box3D(rng.uniform(-1, 1, 3), rng.uniform(0.5, 3, 3), rng.uniform(-3, 3))
        assert abs(box_iou_3d(a, b) - iou_monte_carlo(a, b, 200_000, 1)) < 0.01


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
@settings(max_examples=60, deadline=None)
def test_iou_symmetric_and_bounded(dx, dy, ya, yb):
    a = Box3D((0, 0, 0), (3, 1.5, 1), ya)
    b = Box3D((dx, dy, 0.2), (2, 2, 1), yb)
    v = box_iou_3d(a, b)
    assert 0 <= v <= 1
    assert v == pytest.approx(box_iou_3d(b, a), abs=1e-12)


def test_clip_polygon_and_area():
    sq = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
    shifted = sq + 1
    inter = clip_polygon(sq, shifted)
    assert polygon_area(inter) == pytest.approx(1.0)
    far = sq + 10
    assert len(clip_polygon(sq, far)) == 0 or polygon_area(clip_polygon(sq, far)) == 0


def test_quantize_examples():
    q = (0.25, 0.25, 0.4)
    assert voxel_keys(np.array([[0.3, 0.3, 0.5]]), q)[0] == (1, 1, 1)
    assert voxel_keys(np.array([[-0.1, 0, 0]]), q)[0] == (-1, 0, 0)


def test_quantize_matches_scalar_loop(rng):
    q = (0.25, 0.25, 0.4)
    pts = rng.uniform(-20, 20, (10_000, 3))
    ref = [[math.floor(p[i] / q[i]) for i in range(3)] for p in pts]
    assert np.array_equal(quantize(pts, q), np.array(ref))


def test_quantize_errors():
    with pytest.raises(ValueError):
        quantize(np.zeros((2, 3)), (0.25, 0, 0.4))
    with pytest.raises(ValueError):
        quantize(np.array([[np.inf, 0, 0]]), (1, 1, 1))


def test_pose_roundtrip(rng):
    pose = make_pose((3, -2, 0.5), 0.7)
    pts = rng.normal(size=(50, 3))
    back = transform_points(transform_points(pts, pose), np.linalg.inv(pose))
    assert np.allclose(back, pts)
    a, b = make_pose((1, 0, 0), 0.1), make_pose((0, 2, 0), -0.4)
    rel = relative_pose(a, b)
    assert np.allclose(transform_points(pts, rel), transform_points(transform_points(pts, a), np.linalg.inv(b)))


def test_box_transform_consistent_with_points(rng):
    box = Box3D((2, 1, 0.5), (4, 2, 1.5), 0.3)
    pose = make_pose((5, -1, 0), 1.1)
    local = rng.uniform(-0.45, 0.45, (100, 3)) * np.asarray(box.size)
    pts = to_box_frame(np.zeros((1, 3)), box)  # exercised for coverage of the helper
    assert pts.shape == (1, 3)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = local @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T + np.asarray(box.center)
    assert points_in_box(transform_points(world, pose), box.transformed(pose)).all()


def test_pointset_validation():
    with pytest.raises(ValueError):
        PointSet(np.array([[0, 0, np.nan]]))
    with pytest.raises(ValueError):
        PointSet(np.zeros((3, 3)), np.zeros((2, 1)))
    ps = PointSet.concat([PointSet(np.zeros((2, 3))), PointSet(np.ones((1, 3)))])
    assert len(ps) == 3


def test_group_index_validation():
    assert GroupIndex([0, 2, -1, 2], 3).sizes().tolist() == [1, 0, 2]
    with pytest.raises(ValueError):
        GroupIndex([0, 3], 3)
    with pytest.raises(ValueError):
        GroupIndex([-2], 1)


def test_fspc_roundtrip(tmp_path, rng):
    ps = PointSet(rng.normal(size=(20, 3)).astype(np.float32), rng.normal(size=(20, 2)).astype(np.float32))
    write_fspc(tmp_path / "a.fspc", ps)
    back = read_fspc(tmp_path / "a.fspc")
    assert np.array_equal(back.coords, ps.coords) and np.array_equal(back.features, ps.features)
    (tmp_path / "bad.fspc").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError):
        read_fspc(tmp_path / "bad.fspc")
    data = (tmp_path / "a.fspc").read_bytes()
    (tmp_path / "short.fspc").write_bytes(data[:-4])
    with pytest.raises(ValueError):
        read_fspc(tmp_path / "short.fspc")


def test_csv_roundtrip(tmp_path, rng):
    ps = PointSet(rng.normal(size=(7, 3)), rng.normal(size=(7, 1)))
    write_csv(tmp_path / "p.csv", ps)
    back = read_csv(tmp_path / "p.csv")
    assert np.array_equal(back.coords, ps.coords) and np.array_equal(back.features, ps.features)

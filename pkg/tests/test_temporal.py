from collections import deque

import numpy as np
import pytest

from fsk.core import Box3D, PointSet
from fsk.synth import frame_detector, gen_sequence, make_scene
from fsk.temporal import (AgedPoints, RppConfig, SeedNoise, age_update, assemble, farthest_point_sample, match,
                          recall, rpp, rpp_bruteforce, run_sequence, skeleton_sample)

CFG = RppConfig()


def _moving_scene(seed=0):
    # about 90% static background, one object moving 1 m/frame
    return make_scene(seed, n_objects=1, n_background=900, extent=15, points_per_object=100, speed=1.0,
                      resample=True)


def test_config_validation():
    with pytest.raises(ValueError):
        RppConfig(qsize=(0.25, 0, 0.4))
    with pytest.raises(ValueError):
        RppConfig(num_base_frames=0)
    with pytest.raises(ValueError):
        RppConfig(max_age=0)


def test_rpp_trivial_cases(rng):
    cur = PointSet(rng.uniform(-5, 5, (100, 3)))
    assert len(rpp(cur, [cur], CFG)) == 0
    assert np.array_equal(rpp(cur, [], CFG).coords, cur.coords)
    with pytest.raises(ValueError):
        rpp(cur, [cur] * 6, CFG)


def test_rpp_matches_bruteforce_on_moving_scene():
    frames = gen_sequence(_moving_scene(), 6)
    base = [f.points for f in frames[:5]]
    cur = frames[5].points
    fast = rpp(cur, base, CFG)
    mask = rpp_bruteforce(cur, base, CFG)
    assert np.array_equal(fast.coords, cur.coords[mask])
    assert 0 < len(fast) / len(cur) < 0.2


def test_rpp_monotone_in_base_frames_and_qsize():
    frames = gen_sequence(_moving_scene(1), 7)
    cur = frames[6].points
    counts = [len(rpp(cur, [f.points for f in frames[6 - k:6]], RppConfig(num_base_frames=6))) for k in range(1, 7)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    prev = [frames[5].points]
    sizes = [len(rpp(cur, prev, RppConfig(qsize=(q, q, q)))) for q in (0.15, 0.2, 0.25, 0.3, 0.35)]
    assert sizes == sorted(sizes, reverse=True)


def test_skeleton_budget_keeps_all_interior(rng):
    pts = PointSet(rng.uniform(-3, 3, (200, 3)))
    box = Box3D((0, 0, 0), (2, 2, 2))
    inside = np.flatnonzero(np.all(np.abs(pts.coords) <= 1, axis=1))
    for strategy in ("random", "object_fps", "voxel"):
        out = skeleton_sample(pts, [box], strategy, budget_per_box=len(inside), seed=0)
        assert np.array_equal(out.coords, pts.coords[inside])


def test_object_fps_collinear():
    pts = PointSet(np.array([[float(i), 0, 0] for i in range(11)]))
    box = Box3D((5, 0, 0), (12, 1, 1))
    out = skeleton_sample(pts, [box], "object_fps", budget_per_box=3)
    xs = sorted(out.coords[:, 0].tolist())
    assert xs == [0.0, 5.0, 10.0]
    assert farthest_point_sample(pts.coords, 3, 5)[0] == 5


def test_random_skeleton_determinism(rng):
    pts = PointSet(rng.uniform(-1, 1, (300, 3)))
    box = Box3D((0, 0, 0), (3, 3, 3))
    a = skeleton_sample(pts, [box], "random", 20, seed=1)
    b = skeleton_sample(pts, [box], "random", 20, seed=1)
    c = skeleton_sample(pts, [box], "random", 20, seed=2)
    assert np.array_equal(a.coords, b.coords)
    assert len(a) == len(c) == 20 and not np.array_equal(a.coords, c.coords)


def test_voxel_skeleton(rng):
    pts = PointSet(rng.uniform(-1, 1, (500, 3)))
    out = skeleton_sample(pts, [Box3D((0, 0, 0), (3, 3, 3))], "voxel", 10, qsize=(0.5, 0.5, 0.5))
    assert len(out) == 10
    # first voxel in key order is the (-2, -2, -2) cell
    first = pts.coords[np.all(np.floor(pts.coords / 0.5) == -2, axis=1)]
    assert np.allclose(out.coords[0], first.mean(axis=0))


def test_skeleton_errors_and_empty(rng):
    pts = PointSet(rng.uniform(-1, 1, (10, 3)))
    assert len(skeleton_sample(pts, [Box3D((50, 0, 0), (1, 1, 1))])) == 0
    with pytest.raises(ValueError):
        skeleton_sample(pts, [], "bogus")
    with pytest.raises(ValueError):
        skeleton_sample(pts, [], "random", 0)


def _ps(v, n=3):
    return PointSet(np.full((n, 3), float(v)))


def test_age_update_examples():
    buf = AgedPoints.empty()
    for t in range(4):
        buf = age_update(buf, _ps(t), t, RppConfig(max_age=1))
        assert np.array_equal(buf.points.coords, _ps(t).coords)
    cfg = RppConfig(max_age=2)
    buf = age_update(AgedPoints.empty(), _ps(1), 0, cfg)
    buf = age_update(buf, _ps(2), 1, cfg)
    assert sorted(set(buf.points.coords[:, 0])) == [1, 2]
    buf = age_update(buf, _ps(3), 2, cfg)
    assert sorted(set(buf.points.coords[:, 0])) == [2, 3]
    assert buf.age.min() >= 1 and buf.age.max() <= 2


def test_age_update_matches_queue_oracle(rng):
    for max_age in (1, 2, 3, 5):
        cfg = RppConfig(max_age=max_age)
        buf = AgedPoints.empty()
        q = deque(maxlen=max_age)
        for t in range(15):
            pts = PointSet(rng.normal(size=(int(rng.integers(0, 6)), 3)))
            buf = age_update(buf, pts, t, cfg)
            q.append(pts.coords)
            assert np.array_equal(buf.points.coords, np.concatenate(list(q)))
            assert np.array_equal(buf.age, t - buf.birth_frame + 1)


def test_assemble_cases():
    skel = _ps(9, 2)
    s = assemble(AgedPoints.empty(), skel)
    assert len(s) == 2 and s.provenance.tolist() == [1, 1]
    buf = age_update(AgedPoints.empty(), _ps(1, 3), 0, CFG)
    s = assemble(buf, PointSet.empty())
    assert s.provenance.tolist() == [0, 0, 0]
    s = assemble(buf, skel)
    assert s.provenance.tolist() == [0, 0, 0, 1, 1]
    assert len(s.points()) == 5


def _run(spec, n, **kw):
    frames = gen_sequence(spec, n)
    det = frame_detector(frames, min_points=kw.pop("min_points", 1))
    return frames, run_sequence([f.points for f in frames], [f.pose for f in frames], det, kw.pop("cfg", CFG), **kw)


def test_static_scene_residual_ratio():
    spec = make_scene(2, n_objects=3, n_background=3000, extent=20, ego_velocity=(0.8, 0.2, 0), ego_yaw_rate=0.03)
    frames, res = _run(spec, 10)
    for s in res.stats[CFG.num_base_frames:]:
        assert s.residual_ratio < 0.01
    for f, p in zip(frames, res.predictions):
        assert recall(p, f.boxes) == 1.0


def test_keyframe_gap_one_is_full_frame_detection():
    spec = _moving_scene(3)
    frames, res = _run(spec, 6, keyframe_gap=1, min_points=3)
    det = frame_detector(frames, min_points=3)
    for t, f in enumerate(frames):
        assert res.predictions[t] == det(f.points, t)
    assert all(s.n_skeleton == 0 for s in res.stats)


def test_dropped_seed_recovers_within_max_age():
    spec = _moving_scene(4)
    frames, res = _run(spec, 6, noise=SeedNoise(drop=1.0, seed=0), min_points=5)
    # frame 0 runs on the full frame; after the dropped seed the object comes back via residual points
    assert any(recall(res.predictions[t], frames[t].boxes) == 1.0 for t in range(1, 1 + CFG.max_age))


def test_run_sequence_errors():
    spec = _moving_scene()
    frames = gen_sequence(spec, 2)
    with pytest.raises(ValueError):
        run_sequence([f.points for f in frames], None, frame_detector(frames))
    with pytest.raises(ValueError):
        run_sequence([f.points for f in frames], [frames[0].pose], frame_detector(frames))
    with pytest.raises(ValueError):
        run_sequence([f.points for f in frames], [f.pose for f in frames], frame_detector(frames), keyframe_gap=0)


def test_stats_csv_header():
    _, res = _run(_moving_scene(), 3)
    lines = res.stats_csv().splitlines()
    assert lines[0] == "frame,n_total,n_residual,n_skeleton,residual_ratio,n_predictions,latency_ms"
    assert len(lines) == 4


def test_match_and_recall():
    a = Box3D((0, 0, 0), (2, 2, 2))
    b = Box3D((10, 0, 0), (2, 2, 2))
    assert match([a], [a, b]).tolist() == [True, False]
    assert recall([a.translated((0.1, 0, 0)), b], [a, b]) == 1.0
    assert recall([], [a]) == 0.0 and recall([], []) == 1.0
    # one prediction cannot satisfy two gts
    assert match([a], [a, a]).tolist() == [True, False]

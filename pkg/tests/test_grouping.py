import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsk.core import GroupIndex, PointSet
from fsk.grouping import (UnionFind, VoteOutput, canonical_labels, ccl_group, group_centers, group_points,
                          lift_to_points, radius_pairs, vote_centers)
from fsk.oracles import bfs_components, same_partition


def test_vote_centers_examples(rng):
    pts = PointSet(rng.normal(size=(10, 3)))
    mask, c = vote_centers(pts, VoteOutput(np.ones(10), np.zeros((10, 3))), 0.5)
    assert mask.all() and np.array_equal(c, pts.coords)
    mask, c = vote_centers(pts, VoteOutput(np.ones(10), np.zeros((10, 3))), 1.1)
    assert not mask.any() and c.shape == (0, 3)
    prob = rng.uniform(size=10)
    off = rng.normal(size=(10, 3))
    mask, c = vote_centers(pts, VoteOutput(prob, off), 0.5)
    assert np.array_equal(mask, prob >= 0.5)
    assert np.array_equal(c, pts.coords[mask] + off[mask])


def test_vote_output_validation():
    with pytest.raises(ValueError):
        VoteOutput(np.array([1.5]), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        VoteOutput(np.array([0.5, 0.5]), np.zeros((1, 3)))


def test_ccl_examples():
    g = ccl_group(np.array([[0, 0, 0], [0.3, 0, 0], [2, 0, 0]]), 0.5)
    assert g.ids.tolist() == [0, 0, 1] and g.num_groups == 2
    g = ccl_group(np.array([[1.0, 2, 3]]), 0.5)
    assert g.ids.tolist() == [0] and g.num_groups == 1
    assert ccl_group(np.zeros((0, 3)), 0.5).num_groups == 0


def test_ccl_strict_radius():
    assert ccl_group(np.array([[0, 0, 0], [0.5, 0, 0]]), 0.5).num_groups == 2
    assert ccl_group(np.array([[0, 0, 0], [0.4999, 0, 0]]), 0.5).num_groups == 1


def test_ccl_chain_transitivity():
    chain = np.array([[0.45 * i, 0.0, 0.0] for i in range(50)])
    g = ccl_group(chain, 0.5)
    assert g.num_groups == 1
    # remove one link and the chain splits in two
    g = ccl_group(np.delete(chain, 20, axis=0), 0.5)
    assert g.num_groups == 2


def test_ccl_errors():
    with pytest.raises(ValueError):
        ccl_group(np.zeros((2, 3)), 0.0)
    with pytest.raises(ValueError):
        ccl_group(np.array([[np.nan, 0, 0]]), 1.0)


@given(st.integers(1, 300), st.floats(0.5, 6), st.floats(0.1, 1.5), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_ccl_matches_bfs(k, extent, radius, seed):
    pts = np.random.default_rng(seed).uniform(-extent, extent, (k, 3))
    g = ccl_group(pts, radius)
    assert same_partition(g.ids, bfs_components(pts, radius))
    # canonical numbering: first appearance order
    first = [g.ids.tolist().index(v) for v in range(g.num_groups)]
    assert first == sorted(first)


def test_radius_pairs_match_bruteforce(rng):
    pts = rng.uniform(-3, 3, (200, 3))
    i, j = radius_pairs(pts, 0.7)
    got = {(min(a, b), max(a, b)) for a, b in zip(i.tolist(), j.tolist())}
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    want = {(a, b) for a in range(200) for b in range(a + 1, 200) if d[a, b] < 0.7}
    assert got == want


def test_union_find():
    uf = UnionFind(6)
    uf.union(0, 1)
    uf.union(2, 3)
    uf.union(1, 3)
    assert uf.find(0) == uf.find(2)
    assert uf.find(4) != uf.find(5)
    labels, m = canonical_labels(uf.labels())
    assert labels.tolist() == [0, 0, 0, 0, 1, 2] and m == 3


def test_lift_examples(rng):
    g = lift_to_points(np.array([True, False, True]), GroupIndex([0, 0], 1))
    assert g.ids.tolist() == [0, -1, 0]
    g = lift_to_points(np.zeros(4, bool), GroupIndex(np.zeros(0, int), 0))
    assert g.ids.tolist() == [-1] * 4 and g.num_groups == 0
    mask = rng.uniform(size=30) < 0.5
    voted = GroupIndex(rng.integers(0, 4, mask.sum()), 4)
    out = lift_to_points(mask, voted)
    k = 0
    for i in range(30):
        if mask[i]:
            assert out.ids[i] == voted.ids[k]
            k += 1
        else:
            assert out.ids[i] == -1
    with pytest.raises(ValueError):
        lift_to_points(np.ones(3, bool), GroupIndex([0], 1))


def test_group_centers_examples(rng):
    assert group_centers(np.array([[0, 0, 0], [2, 0, 0]]), GroupIndex([0, 0], 1)).tolist() == [[1, 0, 0]]
    c = rng.normal(size=(5, 3))
    assert np.allclose(group_centers(c, GroupIndex(np.arange(5), 5)), c)
    ids = rng.integers(0, 6, 100)
    c = rng.normal(size=(100, 3))
    got = group_centers(c, GroupIndex(ids, 6))
    for g in range(6):
        if (ids == g).any():
            assert np.allclose(got[g], c[ids == g].mean(axis=0))


def test_group_points_end_to_end():
    coords = np.array([[0, 0, 0], [0.2, 0, 0], [5, 5, 0], [9, 9, 9]], float)
    votes = VoteOutput(np.array([1, 1, 1, 0.0]), np.zeros((4, 3)))
    mask, centers, voted, lifted = group_points(PointSet(coords), votes, radius=0.6)
    assert mask.tolist() == [True, True, True, False]
    assert lifted.ids.tolist() == [0, 0, 1, -1]

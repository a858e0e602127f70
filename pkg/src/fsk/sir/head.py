"""Sparse prediction, positive assignment and group correction."""

from __future__ import annotations

import numpy as np

from ..core import Box3D, GroupIndex, PointSet, points_in_boxes, to_box_frame
from .boxes import Proposal, decode_box, decode_residual
from .nn import MLPHead, mlp_fwd, sigmoid


def head_outputs(group_feats, reg_head: MLPHead, cls_head: MLPHead):
    reg, _ = mlp_fwd(np.asarray(group_feats, dtype=np.float64), reg_head)
    cls, _ = mlp_fwd(np.asarray(group_feats, dtype=np.float64), cls_head)
    return reg, cls[:, 0]


def proposals_from_outputs(reg, cls_logit, group_centers) -> list[Proposal]:
    scores = sigmoid(np.asarray(cls_logit, dtype=np.float64).reshape(-1))
    return [Proposal(decode_box(reg[i], group_centers[i]), float(scores[i]), i)
            for i in range(len(reg))]


def predict(group_feats, group_centers, reg_head: MLPHead, cls_head: MLPHead) -> list[Proposal]:
    """One proposal per group, decoded relative to the group center."""
    group_feats = np.asarray(group_feats, dtype=np.float64)
    if len(group_feats) == 0:
        return []
    reg, cls = head_outputs(group_feats, reg_head, cls_head)
    return proposals_from_outputs(reg, cls, group_centers)


def assign_positives(group_centers, gts) -> np.ndarray:
    """gt index per group whose center lies inside a gt box, else -1; nearest gt center breaks ties."""
    gc = np.asarray(group_centers, dtype=np.float64).reshape(-1, 3)
    out = np.full(len(gc), -1, dtype=np.int64)
    if len(gc) == 0 or len(gts) == 0:
        return out
    inside = points_in_boxes(gc, gts)
    centers = np.array([g.center for g in gts])
    d2 = ((gc[:, None, :] - centers[None]) ** 2).sum(axis=2)
    d2 = np.where(inside, d2, np.inf)
    best = d2.argmin(axis=1)
    hit = inside.any(axis=1)
    out[hit] = best[hit]
    return out


BOUNDARY_DIM = 7


def boundary_features(local: np.ndarray, box: Box3D) -> np.ndarray:
    """Signed distances to the six faces (positive inside) and distance to the center."""
    half = np.asarray(box.size) / 2
    return np.concatenate([
        half - local,  # +x, +y, +z faces
        local + half,  # -x, -y, -z faces
        np.linalg.norm(local, axis=1, keepdims=True),
    ], axis=1)


def correct_groups(points: PointSet, old: GroupIndex | None, proposals):
    """Regroup points by proposal membership, copying points shared by several proposals.

    Returns (expanded points, group index over copies, boundary features, source row of each copy).
    Points inside no proposal are dropped. ``old`` is accepted for interface symmetry;
    membership ignores previous group ids.
    """
    boxes = [p.box if isinstance(p, Proposal) else p for p in proposals]
    inside = points_in_boxes(points.coords, boxes)  # (N, P)
    # copies ordered by proposal, then by source row
    prop_idx, src = np.nonzero(inside.T)
    feats = np.zeros((len(src), BOUNDARY_DIM))
    for j, box in enumerate(boxes):
        sel = prop_idx == j
        if sel.any():
            feats[sel] = boundary_features(to_box_frame(points.coords[src[sel]], box), box)
    expanded = points.subset(src)
    return expanded, GroupIndex(prop_idx, len(boxes)), feats, src


def refine(proposals, residual, iou_logit) -> list[Proposal]:
    scores = sigmoid(np.asarray(iou_logit, dtype=np.float64).reshape(-1))
    return [Proposal(decode_residual(p.box, residual[i]), float(scores[i]), p.group_id)
            for i, p in enumerate(proposals)]

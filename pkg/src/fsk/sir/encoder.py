"""Per-point MLP standing in for a sparse voxel backbone, plus its vote heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import PointSet, points_in_boxes, voxel_centers
from ..grouping import VoteOutput
from .nn import (LinearParams, LinNormActParams, linear_bwd, linear_fwd, lin_norm_act_bwd,
                 lin_norm_act_fwd, prefixed, sigmoid)

DEFAULT_VOXEL = (0.25, 0.25, 0.25)


@dataclass
class EncoderParams:
    mlp: LinNormActParams  # 6 -> C
    seg: LinearParams  # C -> 1
    vote: LinearParams  # C -> 3
    voxel_size: tuple = field(default=DEFAULT_VOXEL, metadata={"static": True})

    @property
    def out_channels(self) -> int:
        return self.mlp.out_channels

    @staticmethod
    def init(rng, width: int, voxel_size=DEFAULT_VOXEL) -> "EncoderParams":
        return EncoderParams(LinNormActParams.init(rng, 6, width),
                             LinearParams.init(rng, width, 1),
                             LinearParams.init(rng, width, 3, scale=0.3 / np.sqrt(width)),
                             tuple(voxel_size))


def voxel_offsets(coords, voxel_size=DEFAULT_VOXEL) -> np.ndarray:
    """Offset from each point to the center of the voxel containing it."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    return voxel_centers(coords, voxel_size) - coords


def encoder_inputs(coords, voxel_size=DEFAULT_VOXEL) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    return np.concatenate([coords, voxel_offsets(coords, voxel_size)], axis=1)


def encoder_fwd(coords, p: EncoderParams):
    x = encoder_inputs(coords, p.voxel_size)
    feats, c0 = lin_norm_act_fwd(x, p.mlp)
    seg, c1 = linear_fwd(feats, p.seg)
    off, c2 = linear_fwd(feats, p.vote)
    return feats, seg[:, 0], off, (c0, c1, c2)


def encoder_bwd(d_feats, d_seg, d_off, cache, p: EncoderParams):
    c0, c1, c2 = cache
    d_feats = d_feats.copy()
    g = {}
    if d_seg is not None:
        df, gs = linear_bwd(d_seg.reshape(-1, 1), c1, p.seg)
        d_feats += df
        g.update(prefixed("seg", gs))
    if d_off is not None:
        df, gv = linear_bwd(d_off, c2, p.vote)
        d_feats += df
        g.update(prefixed("vote", gv))
    _, gm = lin_norm_act_bwd(d_feats, c0, p.mlp)
    g.update(prefixed("mlp", gm))
    return g


def oracle_votes(coords, gts) -> VoteOutput:
    """Ground-truth votes: probability 1 and the exact offset to the containing box center."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    prob = np.zeros(len(coords))
    off = np.zeros((len(coords), 3))
    if len(gts):
        inside = points_in_boxes(coords, gts)
        owner = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
        fg = owner >= 0
        centers = np.array([g.center for g in gts])
        prob[fg] = 1.0
        off[fg] = centers[owner[fg]] - coords[fg]
    return VoteOutput(prob, off)


def stub_encoder(points: PointSet, params: EncoderParams, *, oracle_gts=None):
    """Per-point features and vote-head outputs; ``oracle_gts`` switches the votes to ground truth."""
    feats, seg, off, _ = encoder_fwd(points.coords, params)
    if oracle_gts is not None:
        return feats, oracle_votes(points.coords, oracle_gts)
    return feats, VoteOutput(sigmoid(seg), off)

"""Box targets, proposals and residual coding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Box3D, normalize_yaw

TARGET_DIM = 8  # center offset (3), log size (3), sin/cos yaw (2)
RESIDUAL_DIM = 7  # canonical center delta (3), log size ratio (3), yaw delta (1)


@dataclass(frozen=True)
class Proposal:
    box: Box3D
    score: float
    group_id: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class BoxTarget:
    center_offset: tuple[float, float, float]
    log_size: tuple[float, float, float]
    yaw_sincos: tuple[float, float]

    def as_array(self) -> np.ndarray:
        return np.array([*self.center_offset, *self.log_size, *self.yaw_sincos])

    @staticmethod
    def from_array(a) -> "BoxTarget":
        a = np.asarray(a, dtype=np.float64)
        return BoxTarget(tuple(a[:3]), tuple(a[3:6]), tuple(a[6:8]))


def encode_box(box: Box3D, group_center) -> np.ndarray:
    """Regression target of ``box`` relative to a group center."""
    gc = np.asarray(group_center, dtype=np.float64)
    return np.array([*(np.asarray(box.center) - gc), *np.log(box.size),
                     math.sin(box.yaw), math.cos(box.yaw)])


def decode_box(target, group_center) -> Box3D:
    t = np.asarray(target, dtype=np.float64)
    center = np.asarray(group_center, dtype=np.float64) + t[:3]
    # atan2(0, 0) == 0, so an all-zero output decodes to yaw 0
    return Box3D(tuple(center), tuple(np.exp(t[3:6])), math.atan2(t[6], t[7]))


def encode_residual(proposal: Box3D, gt: Box3D) -> np.ndarray:
    """Residual from a proposal to its gt, with the center delta in the proposal's frame."""
    d = np.asarray(gt.center) - np.asarray(proposal.center)
    c, s = math.cos(proposal.yaw), math.sin(proposal.yaw)
    local = (c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2])
    return np.array([*local, *np.log(np.asarray(gt.size) / np.asarray(proposal.size)),
                     normalize_yaw(gt.yaw - proposal.yaw)])


def decode_residual(proposal: Box3D, residual) -> Box3D:
    r = np.asarray(residual, dtype=np.float64)
    c, s = math.cos(proposal.yaw), math.sin(proposal.yaw)
    d = (c * r[0] - s * r[1], s * r[0] + c * r[1], r[2])
    center = np.asarray(proposal.center) + d
    size = np.asarray(proposal.size) * np.exp(r[3:6])
    return Box3D(tuple(center), tuple(size), proposal.yaw + r[6])

"""The full detector: encoder, grouping, SIR, prediction, correction and SIR2 refinement."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import dynpool
from ..core import GroupIndex, PointSet, box_iou_3d, points_in_boxes
from ..grouping import ccl_group
from ..losses import (FOCAL_ALPHA, FOCAL_GAMMA, LossBreakdown, bce_with_logits_grad, focal_loss_grad,
                      l1_loss_grad, soft_iou_label, total_loss)
from .boxes import RESIDUAL_DIM, TARGET_DIM, Proposal, encode_box, encode_residual
from .encoder import DEFAULT_VOXEL, EncoderParams, encoder_bwd, encoder_fwd, oracle_votes
from .head import BOUNDARY_DIM, assign_positives, correct_groups, proposals_from_outputs, refine
from .layers import SirLayerState, init_stack, sir_backward, sir_forward_cached
from .nn import MLPHead, mlp_bwd, mlp_fwd, named_arrays, prefixed, sigmoid

ORACLE_LOGIT = 20.0


@dataclass(frozen=True)
class FSDConfig:
    encoder_width: int = 16
    sir_widths: tuple[int, ...] = (64, 64, 64)
    sir2_widths: tuple[int, ...] = (64,) * 6
    head_hidden: int = 64
    radius: float = 0.6
    fg_threshold: float = 0.5
    chunk_size: int = dynpool.DEFAULT_CHUNK
    voxel_size: tuple[float, float, float] = DEFAULT_VOXEL
    focal_alpha: float = FOCAL_ALPHA
    focal_gamma: float = FOCAL_GAMMA


@dataclass
class FSDParams:
    encoder: EncoderParams
    sir: list[SirLayerState]
    reg_head: MLPHead
    cls_head: MLPHead
    sir2: list[SirLayerState]
    res_head: MLPHead
    iou_head: MLPHead

    @staticmethod
    def init(cfg: FSDConfig, seed: int = 0) -> "FSDParams":
        rng = np.random.default_rng(seed)
        enc = EncoderParams.init(rng, cfg.encoder_width, cfg.voxel_size)
        sir = init_stack(rng, cfg.encoder_width, cfg.sir_widths)
        d = sum(cfg.sir_widths)
        h = cfg.head_hidden
        small = 0.3 / np.sqrt(h)
        reg = MLPHead.init(rng, d, h, TARGET_DIM, small)
        cls = MLPHead.init(rng, d, h, 1)
        sir2 = init_stack(rng, cfg.encoder_width + BOUNDARY_DIM, cfg.sir2_widths)
        d2 = sum(cfg.sir2_widths)
        res = MLPHead.init(rng, d2, h, RESIDUAL_DIM, small)
        iou = MLPHead.init(rng, d2, h, 1)
        return FSDParams(enc, sir, reg, cls, sir2, res, iou)

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(named_arrays(self))


# -- checkpoints ---------------------------------------------------------------

_MAGIC = b"FSDW"


def save_checkpoint(path, params: FSDParams) -> None:
    arrays = params.arrays()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            a2 = a.reshape(1, -1) if a.ndim == 1 else a
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<II", *a2.shape))
            f.write(np.ascontiguousarray(a2, dtype="<f8").tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    off = 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + n].decode()
        off += n
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        out[name] = np.frombuffer(data, "<f8", rows * cols, off).reshape(rows, cols).copy()
        off += 8 * rows * cols
    return out


def load_checkpoint(path, template: FSDParams) -> FSDParams:
    """Fill a copy of ``template`` with the arrays stored at ``path``."""
    import copy

    stored = read_checkpoint(path)
    params = copy.deepcopy(template)
    for name, a in params.arrays().items():
        if name not in stored:
            raise ValueError(f"checkpoint lacks {name}")
        src = stored[name]
        if src.size != a.size:
            raise ValueError(f"{name}: checkpoint has {src.shape}, model expects {a.shape}")
        a[...] = src.reshape(a.shape)
    return params


# -- forward / backward ----------------------------------------------------------

@dataclass
class TrainAux:
    """Quantities held fixed (stop-gradient) during one loss evaluation."""

    gt_fg: np.ndarray
    vote_target: np.ndarray
    mask: np.ndarray
    groups: GroupIndex
    plan: dynpool.PoolPlan
    group_centers: np.ndarray
    assign: np.ndarray
    reg_targets: np.ndarray
    proposals: list = field(default_factory=list)
    copy_src: np.ndarray | None = None
    copy_groups: GroupIndex | None = None
    copy_plan: dynpool.PoolPlan | None = None
    boundary: np.ndarray | None = None
    copy_centers: np.ndarray | None = None
    res_targets: np.ndarray | None = None
    iou_labels: np.ndarray | None = None


def _gt_point_targets(coords, gts):
    n = len(coords)
    fg = np.zeros(n, dtype=bool)
    tgt = np.zeros((n, 3))
    if gts:
        inside = points_in_boxes(coords, gts)
        fg = inside.any(axis=1)
        owner = inside.argmax(axis=1)
        centers = np.array([g.center for g in gts])
        tgt[fg] = centers[owner[fg]] - coords[fg]
    return fg, tgt


def sir2_refine(F2, X2, index: GroupIndex, proposals, layers, res_head: MLPHead, iou_head: MLPHead,
                *, chunk_size: int = dynpool.DEFAULT_CHUNK) -> list[Proposal]:
    """Refine proposals from their corrected groups; each copy votes for its proposal's center."""
    if not proposals:
        return []
    if len(index) == 0:
        return refine(proposals, np.zeros((len(proposals), RESIDUAL_DIM)), np.zeros(len(proposals)))
    centers = np.array([q.box.center for q in proposals])
    _, G2, _ = sir_forward_cached(layers, F2, X2, centers[index.ids], index,
                                  plan=dynpool.plan(index, chunk_size))
    res = mlp_fwd(G2, res_head)[0]
    logit = mlp_fwd(G2, iou_head)[0][:, 0]
    return refine(proposals, res, logit)


class FSDModel:
    def __init__(self, params: FSDParams, cfg: FSDConfig = FSDConfig()):
        self.params = params
        self.cfg = cfg

    # inference ---------------------------------------------------------------

    def detect(self, points: PointSet, *, oracle_gts=None, return_stages: bool = False):
        """Refined proposals for a point cloud.

        With ``oracle_gts`` the votes come from ground truth and both heads are
        replaced by oracles (exact stage-one targets, identity residual).
        """
        cfg, p = self.cfg, self.params
        coords = points.coords
        feats, seg, off, _ = encoder_fwd(coords, p.encoder)
        if oracle_gts is not None:
            votes = oracle_votes(coords, oracle_gts)
            prob, off = votes.foreground_prob, votes.offsets
        else:
            prob = sigmoid(seg)
        mask = prob >= cfg.fg_threshold
        k = np.flatnonzero(mask)
        voted = coords[k] + off[k]
        groups = ccl_group(voted, cfg.radius)
        stages = {"mask": mask, "voted": voted, "groups": groups}
        if groups.num_groups == 0:
            return ([], stages) if return_stages else []
        plan = dynpool.plan(groups, cfg.chunk_size)
        _, G, sc = sir_forward_cached(p.sir, feats[k], coords[k], voted, groups, plan=plan)
        gc = sc[1].values
        if oracle_gts is not None:
            reg, cls = self._oracle_stage1(gc, oracle_gts)
        else:
            reg = mlp_fwd(G, p.reg_head)[0]
            cls = mlp_fwd(G, p.cls_head)[0][:, 0]
        proposals = proposals_from_outputs(reg, cls, gc)
        stages.update(group_centers=gc, group_feats=G, proposals=proposals)
        refined = self._stage2(points, feats, proposals, oracle=oracle_gts is not None)
        return (refined, stages) if return_stages else refined

    @staticmethod
    def _oracle_stage1(gc, gts):
        assign = assign_positives(gc, gts)
        reg = np.zeros((len(gc), TARGET_DIM))
        reg[:, 7] = 1.0  # cos term so yaw decodes to 0 for unassigned groups
        cls = np.full(len(gc), -ORACLE_LOGIT)
        for i, a in enumerate(assign):
            if a >= 0:
                reg[i] = encode_box(gts[a], gc[i])
                cls[i] = ORACLE_LOGIT
        return reg, cls

    def _stage2(self, points, feats, proposals, *, oracle: bool):
        p = self.params
        if not proposals:
            return []
        _, J, bnd, src = correct_groups(points, None, proposals)
        P = len(proposals)
        if oracle:
            return refine(proposals, np.zeros((P, RESIDUAL_DIM)), np.full(P, ORACLE_LOGIT))
        F2 = np.concatenate([feats[src], bnd], axis=1)
        return sir2_refine(F2, points.coords[src], J, proposals, p.sir2, p.res_head, p.iou_head,
                           chunk_size=self.cfg.chunk_size)

    # training ------------------------------------------------------------------

    def make_aux(self, points: PointSet, gts, *, group_with: str = "pred") -> TrainAux:
        """Discrete assignments and detached targets for the current parameters."""
        cfg, p = self.cfg, self.params
        coords = points.coords
        gt_fg, vote_target = _gt_point_targets(coords, gts)
        _, seg, off, _ = encoder_fwd(coords, p.encoder)
        if group_with == "gt":
            mask = gt_fg
            voted_for_ccl = coords[mask] + vote_target[mask]
        else:
            mask = sigmoid(seg) >= cfg.fg_threshold
            voted_for_ccl = coords[mask] + off[mask]
        groups = ccl_group(voted_for_ccl, cfg.radius)
        plan = dynpool.plan(groups, cfg.chunk_size)
        voted = coords[mask] + off[mask]
        gc = dynpool.pool(voted, plan, "avg").values
        assign = assign_positives(gc, gts)
        reg_t = np.zeros((groups.num_groups, TARGET_DIM))
        for i, a in enumerate(assign):
            if a >= 0:
                reg_t[i] = encode_box(gts[a], gc[i])
        aux = TrainAux(gt_fg, vote_target, mask, groups, plan, gc, assign, reg_t)
        if groups.num_groups == 0:
            return aux
        feats, _, _, _ = encoder_fwd(coords, p.encoder)
        k = np.flatnonzero(mask)
        _, G, _ = sir_forward_cached(p.sir, feats[k], coords[k], voted, groups, plan=plan)
        reg = mlp_fwd(G, p.reg_head)[0]
        cls = mlp_fwd(G, p.cls_head)[0][:, 0]
        return self.attach_proposals(aux, points, gts, proposals_from_outputs(reg, cls, gc))

    def attach_proposals(self, aux: TrainAux, points: PointSet, gts, props) -> TrainAux:
        """Fill the second-stage fields of ``aux`` for the given per-group proposals."""
        assign = aux.assign
        _, J, bnd, src = correct_groups(points, None, props)
        centers = np.array([q.box.center for q in props])
        res_t = np.zeros((len(props), RESIDUAL_DIM))
        q = np.zeros(len(props))
        for i, a in enumerate(assign):
            if a >= 0:
                res_t[i] = encode_residual(props[i].box, gts[a])
                q[i] = soft_iou_label(box_iou_3d(props[i].box, gts[a]))
        aux.proposals = props
        aux.copy_src, aux.copy_groups, aux.boundary = src, J, bnd
        aux.copy_plan = dynpool.plan(J, self.cfg.chunk_size)
        aux.copy_centers = centers[J.ids] if len(src) else np.zeros((0, 3))
        aux.res_targets, aux.iou_labels = res_t, q
        return aux

    def loss_and_grad(self, points: PointSet, gts, aux: TrainAux | None = None, *, need_grad: bool = True):
        """L_total and its gradient w.r.t. every parameter, with ``aux`` held fixed."""
        cfg, p = self.cfg, self.params
        if aux is None:
            aux = self.make_aux(points, gts)
        coords = points.coords
        feats, seg, off, enc_cache = encoder_fwd(coords, p.encoder)
        fa, fg_ = cfg.focal_alpha, cfg.focal_gamma
        l_sem, d_seg = focal_loss_grad(seg, aux.gt_fg.astype(float), fa, fg_)
        l_vote, d_off_v = l1_loss_grad(off[aux.gt_fg], aux.vote_target[aux.gt_fg])
        d_off = np.zeros_like(off)
        d_off[aux.gt_fg] = d_off_v
        d_feats = np.zeros_like(feats)
        grads: dict[str, np.ndarray] = {}
        l_reg = l_cls = l_res = l_iou = 0.0

        k = np.flatnonzero(aux.mask)
        if aux.groups.num_groups > 0:
            voted = coords[k] + off[k]
            _, G, sc = sir_forward_cached(p.sir, feats[k], coords[k], voted, aux.groups, plan=aux.plan)
            reg, rc = mlp_fwd(G, p.reg_head)
            cls, cc = mlp_fwd(G, p.cls_head)
            pos = aux.assign >= 0
            l_reg, d_reg_p = l1_loss_grad(reg[pos], aux.reg_targets[pos])
            l_cls, d_cls = focal_loss_grad(cls[:, 0], pos.astype(float), fa, fg_)
            if need_grad:
                d_reg = np.zeros_like(reg)
                d_reg[pos] = d_reg_p
                dG, g = mlp_bwd(d_reg, rc, p.reg_head)
                grads.update(prefixed("reg_head", g))
                dG2, g = mlp_bwd(d_cls.reshape(-1, 1), cc, p.cls_head)
                grads.update(prefixed("cls_head", g))
                dFk, dV, g = sir_backward(None, dG + dG2, sc, p.sir)
                grads.update(prefixed("sir", g))
                np.add.at(d_feats, k, dFk)
                np.add.at(d_off, k, dV)

        if aux.copy_src is not None and len(aux.proposals) > 0 and len(aux.copy_src) > 0:
            src = aux.copy_src
            F2 = np.concatenate([feats[src], aux.boundary], axis=1)
            _, G2, s2c = sir_forward_cached(p.sir2, F2, coords[src], aux.copy_centers, aux.copy_groups,
                                            plan=aux.copy_plan)
            res, resc = mlp_fwd(G2, p.res_head)
            iou, ic = mlp_fwd(G2, p.iou_head)
            ppos = aux.assign >= 0
            l_res, d_res_p = l1_loss_grad(res[ppos], aux.res_targets[ppos])
            l_iou, d_iou = bce_with_logits_grad(iou[:, 0], aux.iou_labels)
            if need_grad:
                d_res = np.zeros_like(res)
                d_res[ppos] = d_res_p
                dG, g = mlp_bwd(d_res, resc, p.res_head)
                grads.update(prefixed("res_head", g))
                dG2, g = mlp_bwd(d_iou.reshape(-1, 1), ic, p.iou_head)
                grads.update(prefixed("iou_head", g))
                dF2, _, g = sir_backward(None, dG + dG2, s2c, p.sir2)
                grads.update(prefixed("sir2", g))
                np.add.at(d_feats, src, dF2[:, :feats.shape[1]])

        losses = total_loss(l_sem, l_vote, l_reg, l_cls, l_res, l_iou)
        if not need_grad:
            return losses, None
        grads.update(prefixed("encoder", encoder_bwd(d_feats, d_seg, d_off, enc_cache, p.encoder)))
        full = {name: grads.get(name, np.zeros_like(a)) for name, a in p.arrays().items()}
        return losses, full

    def loss(self, points: PointSet, gts, aux: TrainAux) -> LossBreakdown:
        return self.loss_and_grad(points, gts, aux, need_grad=False)[0]


def sgd_step(params: FSDParams, grads: dict, lr: float) -> None:
    for name, a in params.arrays().items():
        a -= lr * grads[name]


def train(model: FSDModel, scenes, steps: int = 50, lr: float = 0.05) -> list[float]:
    """Plain SGD over (points, gts) pairs; returns the total loss per step."""
    history = []
    for step in range(steps):
        points, gts = scenes[step % len(scenes)]
        losses, grads = model.loss_and_grad(points, gts)
        sgd_step(model.params, grads, lr)
        history.append(losses.total)
    return history

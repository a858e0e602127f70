"""Sparse instance recognition layers built from dynamic broadcast and pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dynpool
from ..core import GroupIndex
from .nn import LinNormActParams, lin_norm_act_bwd, lin_norm_act_fwd, prefixed


@dataclass
class SirLayerState:
    lna1: LinNormActParams
    lna2: LinNormActParams

    def __post_init__(self):
        if self.lna2.in_channels != 2 * self.lna1.out_channels:
            raise ValueError("second stage must take the first stage output concatenated with its pooled copy")

    @property
    def in_channels(self) -> int:
        return self.lna1.in_channels - 3

    @property
    def out_channels(self) -> int:
        return self.lna2.out_channels

    @property
    def group_channels(self) -> int:
        return self.lna1.out_channels

    @staticmethod
    def init(rng, cin: int, width: int) -> "SirLayerState":
        return SirLayerState(LinNormActParams.init(rng, cin + 3, width),
                             LinNormActParams.init(rng, 2 * width, width))


def init_stack(rng, cin: int, widths) -> list[SirLayerState]:
    layers = []
    for w in widths:
        layers.append(SirLayerState.init(rng, cin, w))
        cin = w
    return layers


class _Pooler:
    """Dispatch to the planned backend or the straight-line scatter oracle."""

    def __init__(self, index: GroupIndex, plan: dynpool.PoolPlan | None, naive: bool):
        self.index = index
        self.naive = naive
        self.plan = None if naive else (plan or dynpool.plan(index))

    def __call__(self, F, kind):
        if self.naive:
            return dynpool.pool_naive(F, self.index, kind)
        return dynpool.pool(F, self.plan, kind)


def _check_inputs(F, X, X_voted, index):
    n = len(index)
    for name, a, c in (("F", F, None), ("X", X, 3), ("X_voted", X_voted, 3)):
        if a.ndim != 2 or a.shape[0] != n or (c is not None and a.shape[1] != c):
            raise ValueError(f"{name} has shape {a.shape}, expected ({n}, {c or 'C'})")


def sir_layer_fwd(F, X, X_voted, index: GroupIndex, state: SirLayerState, *,
                  plan: dynpool.PoolPlan | None = None, naive: bool = False, centroid=None):
    F = np.asarray(F, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    X_voted = np.asarray(X_voted, dtype=np.float64)
    _check_inputs(F, X, X_voted, index)
    if F.shape[1] != state.in_channels:
        raise ValueError(f"layer expects {state.in_channels} feature channels, got {F.shape[1]}")
    pooler = _Pooler(index, plan, naive)
    cen = centroid if centroid is not None else pooler(X_voted, "avg")
    rel = X - dynpool.broadcast(cen.group_values, index)
    f1, c1 = lin_norm_act_fwd(np.concatenate([F, rel], axis=1), state.lna1)
    pm = pooler(f1, "max")
    f2, c2 = lin_norm_act_fwd(np.concatenate([f1, dynpool.broadcast(pm.group_values, index)], axis=1),
                              state.lna2)
    cache = (index, cen, pm, c1, c2, F.shape[1], f1.shape[1])
    return f2, pm.values, cache


def sir_layer(F, X, X_voted, index: GroupIndex, state: SirLayerState, *, plan=None, naive=False):
    """One SIR layer. Returns (next point features, pooled group features)."""
    f2, g, _ = sir_layer_fwd(F, X, X_voted, index, state, plan=plan, naive=naive)
    return f2, g


def sir_layer_bwd(dF_out, dG, cache, state: SirLayerState):
    """Returns (dF_in, d_centroid, grads)."""
    index, cen, pm, c1, c2, cin, w = cache
    if dF_out is None:
        dF_out = np.zeros((len(index), state.out_channels))
    dh2, g2 = lin_norm_act_bwd(dF_out, c2, state.lna2)
    df1 = dh2[:, :w].copy()
    dpm = dynpool.broadcast_backward(dh2[:, w:], index)
    if dG is not None:
        dpm = dpm + dG
    df1 += dynpool.pool_backward(dpm, pm, "max", index)
    dh1, g1 = lin_norm_act_bwd(df1, c1, state.lna1)
    dF = dh1[:, :cin]
    dcen = -dynpool.broadcast_backward(dh1[:, cin:], index)
    grads = prefixed("lna1", g1)
    grads.update(prefixed("lna2", g2))
    return dF, dcen, grads


def sir_forward_cached(layers, F, X, X_voted, index: GroupIndex, *, plan=None, naive=False):
    if len(layers) < 1:
        raise ValueError("an SIR stack needs at least one layer")
    pooler = _Pooler(index, plan, naive)
    X_voted = np.asarray(X_voted, dtype=np.float64)
    cen = pooler(X_voted, "avg")
    caches, groups = [], []
    for state in layers:
        F, g, c = sir_layer_fwd(F, X, X_voted, index, state, plan=pooler.plan, naive=naive, centroid=cen)
        caches.append(c)
        groups.append(g)
    return F, np.concatenate(groups, axis=1), (caches, cen, index)


def sir_forward(layers, F, X, X_voted, index: GroupIndex, *, plan=None, naive=False):
    """Run a stack of SIR layers; group features of all layers are concatenated channel-wise."""
    F, G, _ = sir_forward_cached(layers, F, X, X_voted, index, plan=plan, naive=naive)
    return F, G


def sir_backward(dF_final, dG_cat, cache, layers):
    """Returns (dF_in, dX_voted, grads keyed by '<layer>.<stage>.<param>')."""
    caches, cen, index = cache
    widths = [s.group_channels for s in layers]
    splits = np.cumsum(widths)[:-1]
    dGs = np.split(dG_cat, splits, axis=1) if dG_cat is not None else [None] * len(layers)
    grads = {}
    dF = dF_final
    dcen = np.zeros_like(cen.values)
    for i in range(len(layers) - 1, -1, -1):
        dF, dc, g = sir_layer_bwd(dF, dGs[i], caches[i], layers[i])
        dcen += dc
        grads.update(prefixed(str(i), g))
    dXv = dynpool.pool_backward(dcen, cen, "avg", index)
    return dF, dXv, grads

"""Dynamic broadcast / pooling over group ID arrays.

Two pooling backends share one contract:

* ``pool_naive`` scatters every row straight into its group slot with
  ``ufunc.at`` (the per-row atomic scatter baseline).
* ``pool`` uses a :class:`PoolPlan`: rows are sorted by group once, groups are
  cut into fixed-size sub-groups, each sub-group is reduced with a contiguous
  kernel, and sub-group partials are combined per group in ascending order.
  The combine order is fixed by the plan, so results do not depend on the
  number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import GroupFeatures, GroupIndex

DEFAULT_CHUNK = 256
KINDS = ("max", "avg")


def default_threads() -> int:
    env = os.environ.get("FSK_THREADS")
    return max(1, int(env)) if env else 1


@dataclass(frozen=True)
class PoolPlan:
    permutation: np.ndarray
    subgroups: np.ndarray  # (S, 3) rows of (group_id, start, end) over permuted order
    chunk_size: int
    num_rows: int
    num_groups: int
    group_sizes: np.ndarray
    # index of the first sub-group of every non-empty group, for the combine step
    group_first: np.ndarray

    def subgroup_list(self) -> list[tuple[int, int, int]]:
        return [tuple(int(v) for v in row) for row in self.subgroups]


@dataclass
class PoolResult:
    group_values: GroupFeatures
    argmax: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return self.group_values.values


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise ValueError(f"pooling kind must be one of {KINDS}, got {kind!r}")


def plan(index: GroupIndex, chunk_size: int = DEFAULT_CHUNK) -> PoolPlan:
    """Sort rows by group id once and cut groups into sub-groups of at most ``chunk_size``."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    ids = index.ids
    fg = np.flatnonzero(ids >= 0)
    order = np.argsort(ids[fg], kind="stable")
    perm = fg[order]
    sizes = np.bincount(ids[fg], minlength=index.num_groups)
    nonempty = np.flatnonzero(sizes)
    n_chunks = -(-sizes[nonempty] // chunk_size)
    group_start = (np.cumsum(sizes[nonempty]) - sizes[nonempty]).astype(np.int64)
    gid = np.repeat(nonempty, n_chunks)
    # chunk ordinal inside its group
    first = (np.cumsum(n_chunks) - n_chunks).astype(np.int64)
    ordinal = np.arange(len(gid)) - np.repeat(first, n_chunks)
    start = np.repeat(group_start, n_chunks) + ordinal * chunk_size
    end = np.minimum(start + chunk_size, np.repeat(group_start + sizes[nonempty], n_chunks))
    subgroups = np.stack([gid, start, end], axis=1).astype(np.int64).reshape(-1, 3)
    return PoolPlan(perm.astype(np.int64), subgroups, int(chunk_size), len(ids),
                    index.num_groups, sizes, first)


def _reduce_range(F, perm, subgroups, lo, hi, kind, want_arg, part_val, part_arg):
    cols = np.arange(F.shape[1])
    for s in range(lo, hi):
        _, a, b = subgroups[s]
        rows = perm[a:b]
        blk = F[rows]
        if kind == "avg":
            part_val[s] = blk.sum(axis=0)
        elif want_arg:
            k = blk.argmax(axis=0)
            part_val[s] = blk[k, cols]
            part_arg[s] = rows[k]
        else:
            part_val[s] = blk.max(axis=0)


def _shards(plan_: PoolPlan, threads: int) -> list[tuple[int, int]]:
    s = len(plan_.subgroups)
    if threads <= 1 or s < 2:
        return [(0, s)]
    # balance shards by row count, not sub-group count
    rows = plan_.subgroups[:, 2] - plan_.subgroups[:, 1]
    cum = np.cumsum(rows)
    cuts = np.searchsorted(cum, np.linspace(0, cum[-1], threads + 1)[1:-1], side="right")
    edges = np.unique(np.concatenate([[0], cuts, [s]]))
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def pool(F: np.ndarray, plan_: PoolPlan, kind: str = "max", *, threads: int | None = None,
         return_argmax: bool = True) -> PoolResult:
    """Per-group max or mean of the rows of ``F`` using a precomputed plan.

    Empty groups produce a zero row (and argmax -1). Max ties resolve to the
    lowest original row index.
    """
    _check_kind(kind)
    F = np.asarray(F)
    if F.ndim != 2 or F.shape[0] != plan_.num_rows:
        raise ValueError(f"feature matrix must have {plan_.num_rows} rows, got shape {F.shape}")
    threads = default_threads() if threads is None else max(1, int(threads))
    M, C = plan_.num_groups, F.shape[1]
    S = len(plan_.subgroups)
    want_arg = kind == "max" and return_argmax
    part_val = np.empty((S, C), dtype=F.dtype)
    part_arg = np.empty((S, C), dtype=np.int64) if want_arg else None

    shards = _shards(plan_, threads)
    args = (F, plan_.permutation, plan_.subgroups)
    if len(shards) == 1:
        _reduce_range(*args, *shards[0], kind, want_arg, part_val, part_arg)
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as ex:
            futs = [ex.submit(_reduce_range, *args, lo, hi, kind, want_arg, part_val, part_arg)
                    for lo, hi in shards]
            for f in futs:
                f.result()

    out = np.zeros((M, C), dtype=F.dtype)
    arg = np.full((M, C), -1, dtype=np.int64) if want_arg else None
    if S == 0:
        return PoolResult(GroupFeatures(out), arg)
    gid = plan_.subgroups[:, 0]
    first = plan_.group_first
    nonempty = gid[first]
    if kind == "avg":
        # sequential ascending-order accumulation of sub-group partial sums
        sums = np.add.reduceat(part_val, first, axis=0)
        out[nonempty] = sums / plan_.group_sizes[nonempty, None].astype(F.dtype)
        return PoolResult(GroupFeatures(out))
    if not want_arg:
        out[nonempty] = np.maximum.reduceat(part_val, first, axis=0)
        return PoolResult(GroupFeatures(out))
    best = part_val[first].copy()
    best_arg = part_arg[first].copy()
    n_sub = np.diff(np.concatenate([first, [S]]))
    for k in range(1, int(n_sub.max())):
        sel = np.flatnonzero(n_sub > k)
        cand = part_val[first[sel] + k]
        # strict comparison keeps the earlier (lower-row) winner on ties
        better = cand > best[sel]
        b_sel = best[sel]
        a_sel = best_arg[sel]
        b_sel[better] = cand[better]
        a_sel[better] = part_arg[first[sel] + k][better]
        best[sel] = b_sel
        best_arg[sel] = a_sel
    out[nonempty] = best
    arg[nonempty] = best_arg
    return PoolResult(GroupFeatures(out), arg)


def pool_naive(F: np.ndarray, index: GroupIndex, kind: str = "max", *,
               return_argmax: bool = True) -> PoolResult:
    """Reference backend: one scatter per row, no sorting or partitioning."""
    _check_kind(kind)
    F = np.asarray(F)
    if F.ndim != 2 or F.shape[0] != len(index):
        raise ValueError(f"feature matrix must have {len(index)} rows, got shape {F.shape}")
    M, C = index.num_groups, F.shape[1]
    ids = index.ids
    fg = ids >= 0
    rows = np.flatnonzero(fg)
    gids = ids[fg]
    Ff = F[fg] if not fg.all() else F
    counts = np.bincount(gids, minlength=M)
    empty = counts == 0
    if kind == "avg":
        acc = np.zeros((M, C), dtype=F.dtype)
        np.add.at(acc, gids, Ff)
        acc[~empty] /= counts[~empty, None].astype(F.dtype)
        return PoolResult(GroupFeatures(acc))
    acc = np.full((M, C), -np.inf, dtype=F.dtype)
    np.maximum.at(acc, gids, Ff)
    acc[empty] = 0
    if not return_argmax:
        return PoolResult(GroupFeatures(acc))
    winner = Ff == acc[gids]
    cand = np.where(winner, rows[:, None], np.iinfo(np.int64).max)
    arg = np.full((M, C), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(arg, gids, cand)
    arg[empty] = -1
    return PoolResult(GroupFeatures(acc), arg)


def broadcast(G: GroupFeatures | np.ndarray, index: GroupIndex) -> np.ndarray:
    """Replicate each group row to its member points; background rows are zero."""
    vals = G.values if isinstance(G, GroupFeatures) else np.asarray(G)
    if vals.shape[0] != index.num_groups:
        raise ValueError(f"expected {index.num_groups} group rows, got {vals.shape[0]}")
    out = np.zeros((len(index), vals.shape[1]), dtype=vals.dtype)
    fg = index.ids >= 0
    out[fg] = vals[index.ids[fg]]
    return out


def broadcast_backward(grad_out: np.ndarray, index: GroupIndex) -> np.ndarray:
    """Adjoint of :func:`broadcast`: sum member-row gradients per group."""
    grad_out = np.asarray(grad_out)
    if grad_out.shape[0] != len(index):
        raise ValueError("gradient row count does not match the index")
    g = np.zeros((index.num_groups, grad_out.shape[1]), dtype=grad_out.dtype)
    fg = index.ids >= 0
    np.add.at(g, index.ids[fg], grad_out[fg])
    return g


def pool_backward(grad_G: np.ndarray, result: PoolResult, kind: str, index: GroupIndex) -> np.ndarray:
    """Gradient of pooling with respect to the input rows."""
    _check_kind(kind)
    grad_G = np.asarray(grad_G)
    M = index.num_groups
    if grad_G.ndim != 2 or grad_G.shape[0] != M or grad_G.shape != result.values.shape:
        raise ValueError(f"grad shape {grad_G.shape} does not match pooled shape {result.values.shape}")
    N, C = len(index), grad_G.shape[1]
    out = np.zeros((N, C), dtype=grad_G.dtype)
    if kind == "avg":
        sizes = index.sizes()
        scale = np.zeros(M, dtype=grad_G.dtype)
        scale[sizes > 0] = 1.0 / sizes[sizes > 0]
        return broadcast(grad_G * scale[:, None], index)
    if result.argmax is None:
        raise ValueError("max-pool backward needs the argmax from the forward pass")
    arg = result.argmax
    valid = arg >= 0
    cols = np.broadcast_to(np.arange(C), arg.shape)
    # each (row, col) wins for at most one group, so plain assignment is safe
    out[arg[valid], cols[valid]] = grad_G[valid]
    return out

"""Central finite-difference check of the detector's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# gradients smaller than this are compared on an absolute scale
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    num_checked: int
    per_param: dict

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def rel_error(analytic, numeric, floor: float = REL_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(loss_fn, arr: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``arr`` (modified in place and restored)."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    idx = range(flat.size) if index is None else index
    g = out.reshape(-1)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        lp = loss_fn()
        flat[i] = old - h
        lm = loss_fn()
        flat[i] = old
        g[i] = (lp - lm) / (2 * h)
    return out


def check_model(model, points, gts, aux=None, *, h: float = 1e-5, params=None) -> GradCheckReport:
    """Compare ``model.loss_and_grad`` with central differences over every parameter element."""
    if aux is None:
        aux = model.make_aux(points, gts)
    _, grads = model.loss_and_grad(points, gts, aux)

    def loss_fn():
        return model.loss(points, gts, aux).total

    worst = (0.0, "", ())
    per_param = {}
    count = 0
    for name, arr in model.params.arrays().items():
        if params is not None and name not in params:
            continue
        num = numeric_grad(loss_fn, arr, h)
        err = rel_error(grads[name], num)
        count += err.size
        m = float(err.max()) if err.size else 0.0
        per_param[name] = m
        if m > worst[0]:
            worst = (m, name, np.unravel_index(int(err.argmax()), err.shape))
    return GradCheckReport(worst[0], worst[1], tuple(int(i) for i in worst[2]), count, per_param)

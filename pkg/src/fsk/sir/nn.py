"""Dense building blocks with hand-written backward passes."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-5
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * x ** 3)))


def gelu_grad(x):
    t = np.tanh(_GELU_K * (x + _GELU_C * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3 * _GELU_C * x * x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_finite(obj, name):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, np.ndarray) and not np.all(np.isfinite(v)):
            raise ValueError(f"{name}.{f.name} contains non-finite values")


@dataclass
class LinearParams:
    weight: np.ndarray  # (Cout, Cin)
    bias: np.ndarray  # (Cout,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[0] != len(self.bias):
            raise ValueError("linear weight/bias shapes disagree")
        _check_finite(self, "linear")

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @staticmethod
    def init(rng, cin, cout, scale=None):
        scale = 1.0 / math.sqrt(cin) if scale is None else scale
        return LinearParams(rng.normal(0, scale, (cout, cin)), rng.normal(0, 0.1, cout))


@dataclass
class LinNormActParams:
    weight: np.ndarray
    bias: np.ndarray
    norm_scale: np.ndarray
    norm_shift: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        self.norm_scale = np.asarray(self.norm_scale, dtype=np.float64).reshape(-1)
        self.norm_shift = np.asarray(self.norm_shift, dtype=np.float64).reshape(-1)
        cout = self.weight.shape[0] if self.weight.ndim == 2 else -1
        if not (len(self.bias) == len(self.norm_scale) == len(self.norm_shift) == cout):
            raise ValueError("LinNormAct parameter shapes disagree")
        _check_finite(self, "lin_norm_act")

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @staticmethod
    def init(rng, cin, cout):
        w = rng.normal(0, 1.0 / math.sqrt(cin), (cout, cin))
        return LinNormActParams(w, rng.normal(0, 0.1, cout),
                                1.0 + rng.normal(0, 0.1, cout), rng.normal(0, 0.1, cout))


def linear_fwd(x, p: LinearParams):
    if x.shape[1] != p.in_channels:
        raise ValueError(f"linear expects {p.in_channels} input channels, got {x.shape[1]}")
    return x @ p.weight.T + p.bias, x


def linear_bwd(dy, cache, p: LinearParams):
    x = cache
    return dy @ p.weight, {"weight": dy.T @ x, "bias": dy.sum(axis=0)}


def lin_norm_act_fwd(x, p: LinNormActParams):
    if x.ndim != 2 or x.shape[1] != p.in_channels:
        raise ValueError(f"LinNormAct expects {p.in_channels} input channels, got shape {x.shape}")
    z = x @ p.weight.T + p.bias
    mu = z.mean(axis=1, keepdims=True)
    zc = z - mu
    var = (zc * zc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + NORM_EPS)
    zhat = zc * inv
    y = zhat * p.norm_scale + p.norm_shift
    return gelu(y), (x, zhat, inv, y)


def lin_norm_act(x, p: LinNormActParams):
    """act(normalize(x W^T + b)) with per-row channel normalization and tanh-GELU."""
    return lin_norm_act_fwd(np.asarray(x, dtype=np.float64), p)[0]


def lin_norm_act_bwd(dout, cache, p: LinNormActParams):
    x, zhat, inv, y = cache
    dy = dout * gelu_grad(y)
    g_scale = (dy * zhat).sum(axis=0)
    g_shift = dy.sum(axis=0)
    dzhat = dy * p.norm_scale
    dz = inv * (dzhat - dzhat.mean(axis=1, keepdims=True)
                - zhat * (dzhat * zhat).mean(axis=1, keepdims=True))
    grads = {"weight": dz.T @ x, "bias": dz.sum(axis=0), "norm_scale": g_scale, "norm_shift": g_shift}
    return dz @ p.weight, grads


@dataclass
class MLPHead:
    """LinNormAct hidden layer followed by a linear output layer."""

    hidden: LinNormActParams
    out: LinearParams

    @staticmethod
    def init(rng, cin, hidden, cout, out_scale=None):
        return MLPHead(LinNormActParams.init(rng, cin, hidden), LinearParams.init(rng, hidden, cout, out_scale))


def mlp_fwd(x, p: MLPHead):
    h, c1 = lin_norm_act_fwd(x, p.hidden)
    y, c2 = linear_fwd(h, p.out)
    return y, (c1, c2)


def mlp_bwd(dy, cache, p: MLPHead):
    c1, c2 = cache
    dh, g2 = linear_bwd(dy, c2, p.out)
    dx, g1 = lin_norm_act_bwd(dh, c1, p.hidden)
    grads = {f"hidden.{k}": v for k, v in g1.items()}
    grads.update({f"out.{k}": v for k, v in g2.items()})
    return dx, grads


def named_arrays(obj, prefix: str = ""):
    """Yield (dotted name, array) for every parameter array reachable from ``obj``."""
    if isinstance(obj, np.ndarray):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            if f.metadata.get("static"):
                continue
            yield from named_arrays(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from named_arrays(v, f"{prefix}.{i}" if prefix else str(i))


def prefixed(prefix: str, grads: dict) -> dict:
    return {f"{prefix}.{k}": v for k, v in grads.items()}

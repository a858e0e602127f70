import math

import numpy as np
import pytest

from fsk.losses import (bce_with_logits, bce_with_logits_grad, focal_loss, focal_loss_grad, l1_loss,
                        l1_loss_grad, soft_iou_label, total_loss)


def _numeric(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_l1_examples(rng):
    assert l1_loss(np.ones(3), np.ones(3)) == 0
    assert l1_loss(np.array([1.0, -1]), np.zeros(2)) == 1.0
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    assert l1_loss(a, b) == pytest.approx(sum(abs(x - y) for x, y in zip(a.flat, b.flat)) / 20)
    assert l1_loss(np.zeros(0), np.zeros(0)) == 0
    with pytest.raises(ValueError):
        l1_loss(np.zeros(2), np.zeros(3))


def test_soft_label_spot_values():
    assert soft_iou_label(0.25) == 0.0
    assert soft_iou_label(0.5) == 0.5
    assert soft_iou_label(0.75) == 1.0
    assert soft_iou_label(0.0) == 0.0 and soft_iou_label(1.0) == 1.0
    assert np.array_equal(soft_iou_label(np.array([0.3, 0.6])), np.minimum(1, np.maximum(0, 2 * np.array([0.3, 0.6]) - 0.5)))


def _bce(z, y):
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def test_focal_gamma0_is_weighted_bce(rng):
    z = rng.normal(0, 3, 50)
    y = (rng.uniform(size=50) < 0.4).astype(float)
    assert focal_loss(z, y, 0.5, 0.0) == pytest.approx(0.5 * _bce(z, y).mean(), abs=1e-10)
    w = np.where(y > 0, 0.25, 0.75)
    assert abs(focal_loss(z, y, 0.25, 0.0) - (w * _bce(z, y)).mean()) < 1e-10


def test_focal_confident_prediction_near_zero():
    assert focal_loss(np.array([30.0, -30.0]), np.array([1.0, 0.0])) <= 1e-6


def test_focal_matches_scalar_loop(rng):
    z = rng.normal(0, 2, 40)
    y = (rng.uniform(size=40) < 0.5).astype(float)
    total = 0.0
    for zi, yi in zip(z, y):
        p = min(max(1 / (1 + math.exp(-zi)), 1e-7), 1 - 1e-7)
        pt = p if yi else 1 - p
        a = 0.25 if yi else 0.75
        total += -a * (1 - pt) ** 2 * math.log(pt)
    assert focal_loss(z, y) == pytest.approx(total / 40, rel=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0])
def test_focal_gradient(rng, gamma):
    z = rng.normal(0, 2, 20)
    y = (rng.uniform(size=20) < 0.5).astype(float)
    _, g = focal_loss_grad(z, y, 0.25, gamma)
    num = _numeric(lambda x: focal_loss(x, y, 0.25, gamma), z)
    assert np.allclose(g, num, rtol=1e-6, atol=1e-9)


def test_bce_and_l1_gradients(rng):
    z = rng.normal(size=15)
    q = rng.uniform(size=15)
    assert np.allclose(bce_with_logits_grad(z, q)[1], _numeric(lambda x: bce_with_logits(x, q), z), atol=1e-9)
    a, b = rng.normal(size=10), rng.normal(size=10)
    assert np.allclose(l1_loss_grad(a, b)[1], _numeric(lambda x: l1_loss(x, b), a), atol=1e-8)
    assert bce_with_logits(np.array([0.0]), np.array([1.0])) == pytest.approx(math.log(2))


def test_total_loss(rng):
    assert total_loss().total == 0
    assert total_loss(1, 1, 1, 1, 1, 1).total == 6
    parts = rng.uniform(size=6)
    assert total_loss(*parts).total == pytest.approx(parts.sum())
    assert set(total_loss().as_dict()) == {"sem", "vote", "reg", "cls", "res", "iou", "total"}
    with pytest.raises(ValueError):
        total_loss(sem=float("nan"))

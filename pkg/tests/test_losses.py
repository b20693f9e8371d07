import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mscnet.engine import Tensor, gradcheck
from mscnet.losses import LossConfig, bce_loss, iou_loss, total_loss

from oracles import bce_loop, iou_loop

EPS = 1e-7


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_bce_perfect_prediction():
    g = np.array([[[[0.0, 1.0], [1.0, 0.0]]]])
    assert bce_loss(T(g), g).item() == pytest.approx(-math.log(1 - EPS), abs=1e-15)


def test_bce_half():
    g = (np.arange(16).reshape(1, 1, 4, 4) % 2).astype(float)
    assert bce_loss(T(np.full(g.shape, 0.5)), g).item() == pytest.approx(math.log(2), abs=1e-15)


def test_bce_and_iou_loop_oracles(rng):
    p = rng.uniform(0, 1, (3, 1, 5, 4))
    g = (rng.random(p.shape) > 0.5).astype(float)
    assert bce_loss(T(p), g).item() == pytest.approx(bce_loop(p, g), abs=1e-10)
    assert iou_loss(T(p), g).item() == pytest.approx(iou_loop(p, g), abs=1e-10)


def test_bce_sum_reduction(rng):
    p = rng.uniform(0.1, 0.9, (1, 1, 3, 3))
    g = (rng.random(p.shape) > 0.5).astype(float)
    assert bce_loss(T(p), g, reduction="sum").item() == pytest.approx(9 * bce_loop(p, g), abs=1e-10)


def test_iou_fixtures():
    n = 37
    ones = np.ones((1, 1, 1, n))
    assert iou_loss(T(ones), ones).item() == 0.0
    assert iou_loss(T(np.zeros_like(ones)), ones).item() == pytest.approx(1 - 1 / (n + 1), abs=1e-15)


def test_total_loss_closed_form():
    n = 50
    g = np.ones((1, 1, 5, 10))
    p = np.zeros_like(g)
    want = -math.log(EPS) + 0.6 * n / (n + 1)
    assert total_loss(T(p), g).item() == pytest.approx(want, rel=1e-12)


def test_lambda_zero_is_bce(rng):
    p = rng.uniform(0, 1, (2, 1, 4, 4))
    g = (rng.random(p.shape) > 0.5).astype(float)
    assert total_loss(T(p), g, LossConfig(lam=0.0)).item() == bce_loss(T(p), g).item()


def test_shape_mismatch():
    with pytest.raises(ValueError):
        bce_loss(T(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 3)))
    with pytest.raises(ValueError):
        LossConfig(lam=-1)


def test_loss_gradients(rng):
    p = Tensor(rng.uniform(0.05, 0.95, (2, 1, 4, 4)))
    g = (rng.random(p.shape) > 0.5).astype(float)
    for fn in (bce_loss, iou_loss, total_loss):
        assert gradcheck(lambda t: fn(t, g), p).passed


maps = arrays(np.float64, (2, 1, 3, 3), elements=st.floats(0, 1))


@settings(max_examples=60, deadline=None)
@given(p=maps, g=maps)
def test_iou_symmetric_and_bounded(p, g):
    a, b = iou_loss(T(p), g).item(), iou_loss(T(g), p).item()
    assert a == b
    assert 0 <= a < 1


@settings(max_examples=60, deadline=None)
@given(p=maps, bits=arrays(np.bool_, (2, 1, 3, 3)))
def test_losses_nonnegative(p, bits):
    g = bits.astype(float)
    assert bce_loss(T(p), g).item() >= 0
    assert total_loss(T(p), g).item() >= 0

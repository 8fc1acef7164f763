import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lift3d import losses
from lift3d.autodiff import Tensor, ShapeError, gradients

from conftest import AnalyticField, sphere_sdf


def test_view_weight_examples():
    assert losses.view_weight((0, 0, 2), (0, 0, 5)) == 0.0
    assert losses.view_weight((2, 0, 0), (0, 3, 0)) == pytest.approx(0.5)
    assert losses.view_weight((2, 0, 0), (-1, 0, 0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        losses.view_weight((0, 0, 0), (1, 0, 0))


def test_input_view_weight_modes():
    pos = [(2, 0, 0), (0, 2, 0), (-2, 0, 0)]
    np.testing.assert_allclose(losses.input_view_weights(pos, 0, "literal"), [0, 0.5, 1])
    np.testing.assert_allclose(losses.input_view_weights(pos, 0), [1, 0.5, 1])


def test_rgb_examples():
    c = Tensor(np.array([[0.2, 0.5, 0.9]]))
    assert float(losses.rgb_loss(c, c.data).data) == 0.0
    assert float(losses.rgb_loss(Tensor(np.array([[1.0, 0, 0]])), np.zeros((1, 3)), 1.0).data) == 1.0


def test_rgb_linear_in_weight():
    rng = np.random.default_rng(0)
    ref = rng.random((8, 3))
    x = Tensor(rng.random((8, 3)), requires_grad=True)
    l1 = losses.rgb_loss(x, ref, 0.7)
    (g1,) = gradients(l1, [x])
    l2 = losses.rgb_loss(x, ref, 1.4)
    (g2,) = gradients(l2, [x])
    assert float(l2.data) == pytest.approx(2 * float(l1.data))
    np.testing.assert_allclose(g2, 2 * g1)


def test_rgb_argmin_is_reference():
    ref = np.array([[0.2, 0.6, 0.3]])
    x = np.array([[0.9, 0.1, 0.5]])
    for _ in range(200):
        t = Tensor(x, requires_grad=True)
        (g,) = gradients(losses.rgb_loss(t, ref, 1.0), [t])
        x = x - 0.1 * g
    np.testing.assert_allclose(x, ref, atol=1e-6)


def test_normal_examples():
    n = Tensor(np.array([[0.0, 0.0, 1.0]]))
    assert float(losses.normal_loss(n, n.data).data) == 0.0
    v = float(losses.normal_loss(Tensor(np.array([[1.0, 0, 0]])), np.array([[-1.0, 0, 0]])).data)
    assert v == pytest.approx(4.0)
    tgt = np.array([[0.6, 0.0, 0.8]])
    v = float(losses.normal_loss(Tensor(np.zeros((1, 3))), tgt).data)
    assert v == pytest.approx(1.4 + 1.0)


def test_eikonal_examples():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(500, 3))
    p = d / np.linalg.norm(d, axis=-1, keepdims=True) * rng.uniform(0.1, 1.0, (500, 1))
    assert float(losses.eikonal_loss(AnalyticField(sphere_sdf()), p).data) <= 1e-10
    plane2 = AnalyticField(lambda q: 2.0 * q[:, 0])
    assert float(losses.eikonal_loss(plane2, rng.uniform(-1, 1, (100, 3))).data) == pytest.approx(1.0, abs=1e-6)
    assert losses.LossWeights().eikonal == 0.7


def test_eikonal_points_mix():
    rng = np.random.default_rng(1)
    surf = np.tile([[0.5, 0.0, 0.0]], (10, 1))
    pts = losses.eikonal_points(rng, 100, surf)
    assert pts.shape == (100, 3)
    near = np.linalg.norm(pts - [0.5, 0, 0], axis=-1) < 0.2
    assert near.sum() >= 50
    assert losses.eikonal_points(rng, 40, None).shape == (40, 3)


def test_semantic_examples():
    a = Tensor(np.array([1.0, 0.0]))
    b = Tensor(np.array([0.0, 1.0]))
    assert float(losses.semantic_loss([losses.SemanticPair(a, a, 1.0)]).data) == 0.0
    assert float(losses.semantic_loss([losses.SemanticPair(a, b, 1.0)]).data) == pytest.approx(2.0)
    w = losses.view_weight((1, 0, 0), (-1, 0, 0))
    assert float(losses.semantic_loss([losses.SemanticPair(a, b, w)]).data) == pytest.approx(2.0)
    with pytest.raises(ShapeError):
        losses.semantic_loss([losses.SemanticPair(a, Tensor(np.ones(3)), 1.0)])


def test_auxiliary_examples():
    o = Tensor(np.array([1.0, 1.0, 0.0, 0.0]))
    m = np.array([1, 1, 0, 0])
    mask, trans = losses.auxiliary_losses(o, m, Tensor(np.zeros(7)), Tensor(np.zeros((4, 3))))
    assert float(mask.data) <= 2e-4
    assert float(trans.data) == 0.0
    half = losses.mask_loss(Tensor(np.full(5, 0.5)), np.ones(5))
    assert float(half.data) == pytest.approx(math.log(2), abs=1e-6)


def test_total_loss_examples():
    one = Tensor(np.array(1.0))
    rep = losses.total_loss({"rgb": one, "sem": Tensor(np.array(0.0)), "eik": one, "norm": one})
    assert rep.total == pytest.approx(1.8)
    assert float(rep.tensor.data) == pytest.approx(1.8)
    assert losses.total_loss({k: Tensor(np.array(0.0)) for k in losses.COMPONENTS}).total == 0.0
    assert losses.LossWeights().normal == 0.1
    rep2 = losses.total_loss({"rgb": one, "eik": one, "norm": one}, stage=2)
    assert rep2.total == pytest.approx(1.0)


def test_total_loss_rejects_nan_and_unknown():
    with pytest.raises(FloatingPointError, match="eik"):
        losses.total_loss({"rgb": Tensor(np.array(1.0)), "eik": Tensor(np.array(np.nan))})
    with pytest.raises(KeyError):
        losses.total_loss({"bogus": Tensor(np.array(1.0))})


@given(st.lists(st.floats(0, 10), min_size=6, max_size=6), st.floats(0.1, 5))
def test_total_linear_in_components(vals, scale):
    comp = {k: Tensor(np.array(v)) for k, v in zip(losses.COMPONENTS, vals)}
    scaled = {k: Tensor(np.array(v * scale)) for k, v in zip(losses.COMPONENTS, vals)}
    assert losses.total_loss(scaled).total == pytest.approx(scale * losses.total_loss(comp).total, rel=1e-9)


@given(st.integers(0, 1000))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    c = Tensor(rng.random((6, 3)))
    n = rng.normal(size=(6, 3))
    assert float(losses.rgb_loss(c, rng.random((6, 3))).data) >= 0
    assert float(losses.normal_loss(Tensor(n), n / np.linalg.norm(n, axis=-1, keepdims=True)).data) >= 0
    assert float(losses.mask_loss(Tensor(rng.random(6)), rng.integers(0, 2, 6)).data) >= 0


def test_loss_input_gradients_fd():
    rng = np.random.default_rng(3)
    o0 = rng.uniform(0.1, 0.9, 6)
    m = rng.integers(0, 2, 6)
    o = Tensor(o0, requires_grad=True)
    (g,) = gradients(losses.mask_loss(o, m), [o])
    h = 1e-6
    fd = np.array([(float(losses.mask_loss(Tensor(o0 + h * e), m).data)
                    - float(losses.mask_loss(Tensor(o0 - h * e), m).data)) / (2 * h) for e in np.eye(6)])
    np.testing.assert_allclose(g, fd, rtol=1e-3)
    n0 = rng.normal(size=(4, 3))
    tgt = rng.normal(size=(4, 3))
    tgt /= np.linalg.norm(tgt, axis=-1, keepdims=True)
    n = Tensor(n0, requires_grad=True)
    (g,) = gradients(losses.normal_loss(n, tgt), [n])
    fd = np.zeros_like(n0)
    for i in np.ndindex(n0.shape):
        a, b = n0.copy(), n0.copy()
        a[i] += h
        b[i] -= h
        fd[i] = (float(losses.normal_loss(Tensor(a), tgt).data) - float(losses.normal_loss(Tensor(b), tgt).data)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-3, atol=1e-8)

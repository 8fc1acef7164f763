import numpy as np
import pytest

from lift3d import semantic
from lift3d.autodiff import Tensor, gradients


def test_sample_viewpoints_contract():
    sampler = semantic.AugmentationSampler(radius=2.5)
    train = [np.array([2.5, 0, 0]), np.array([0, 2.5, 0.3])]
    cams = semantic.sample_viewpoints(sampler, seed=3, iteration=10, training_positions=train)
    assert len(cams) == 4
    for c in cams:
        assert abs(np.linalg.norm(c.position) - 2.5) <= 1e-6
        for t in train:
            cos = c.position @ t / (np.linalg.norm(c.position) * np.linalg.norm(t))
            assert np.degrees(np.arccos(np.clip(cos, -1, 1))) >= sampler.min_gap_deg
    again = semantic.sample_viewpoints(sampler, seed=3, iteration=10, training_positions=train)
    for a, b in zip(cams, again):
        np.testing.assert_array_equal(a.c2w, b.c2w)


def test_extractor_identity_and_norm():
    ex = semantic.BuiltinExtractor()
    img = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
    a, b = ex.extract(img), ex.extract(img.copy())
    assert float(((a - b) * (a - b)).sum().data) == 0.0
    for side in (16, 24, 64):
        f = ex.extract(np.random.default_rng(side).random((side, side, 3)))
        assert f.shape == (128,)
        assert abs(np.linalg.norm(f.data) - 1) <= 1e-5
    with pytest.raises(ValueError):
        ex.extract(np.zeros((8, 8, 3)))


def test_extractor_pixel_gradient_fd():
    ex = semantic.BuiltinExtractor(dim=32, seed=2)
    rng = np.random.default_rng(1)
    img0 = rng.random((16, 16, 3))
    w = rng.normal(size=32)
    x = Tensor(img0, requires_grad=True)
    (g,) = gradients((ex.extract(x) * Tensor(w)).sum(), [x])
    h = 1e-6
    for i in [(0, 0, 0), (5, 7, 1), (15, 3, 2), (8, 8, 0)]:
        a, b = img0.copy(), img0.copy()
        a[i] += h
        b[i] -= h
        fd = (float((ex.extract(Tensor(a)).data * w).sum()) - float((ex.extract(Tensor(b)).data * w).sum())) / (2 * h)
        assert abs(g[i] - fd) <= 1e-3 * max(abs(fd), 1e-6)


def test_pyramid_operator_preserves_constants():
    for n in (16, 24, 64, 100):
        op = semantic.pyramid_operator(n)
        assert op.shape == (16, n)
        np.testing.assert_allclose(op.sum(1), 1.0, atol=1e-12)


def test_assemble_counts_and_weights():
    f = lambda i: Tensor(np.eye(4)[i % 4])
    keys = [(f(1), np.array([2.0, 0, 0])), (f(2), np.array([0, 2.0, 0]))]
    aug = [(f(3), np.array([1.0, 0, 0])), (f(0), np.array([0, 0, 3.0])), (f(1), np.array([-1.0, 0, 0]))]
    pairs = semantic.assemble_semantic_terms(f(0), keys, aug)
    assert len(pairs) == 3 + 2 * 3
    assert pairs[3].weight == 0.0  # key 0 and augmented 0 share a direction
    assert pairs[5].weight == pytest.approx(1.0)
    assert len(semantic.assemble_semantic_terms(f(0), [], aug)) == 3


def test_extractor_discriminates_scenes():
    from lift3d.renderer import Camera, render_image
    from conftest import AnalyticField

    cam = Camera.look_at((0.0, -2.5, 0.6), width=32, height=32)
    sphere = AnalyticField(lambda p: np.linalg.norm(p, axis=-1) - 0.5, 60.0, color=(0.8, 0.3, 0.2))
    torus = AnalyticField(lambda p: np.hypot(np.hypot(p[..., 0], p[..., 1]) - 0.4, p[..., 2]) - 0.15, 60.0,
                          color=(0.8, 0.3, 0.2))
    ex = semantic.BuiltinExtractor()

    def feat(field, seed):
        img = render_image(field, cam, stage="geometry", n_coarse=16, n_fine=16, seed=seed)["color"]
        return ex.extract(img.astype(np.float32)).data

    same = np.sum((feat(sphere, 1) - feat(sphere, 2)) ** 2)
    other = np.sum((feat(sphere, 1) - feat(torus, 1)) ** 2)
    assert same <= other

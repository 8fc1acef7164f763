import hashlib

import numpy as np
import pytest

from lift3d import dataio, synthgen
from lift3d.renderer import Camera, generate_rays


def test_analytic_sdf_examples():
    sph = synthgen.AnalyticScene("s", synthgen.Sphere((0, 0, 0), 0.5))
    assert float(synthgen.analytic_sdf(sph, np.array([[1.0, 0, 0]]))[0][0]) == pytest.approx(0.5)
    box = synthgen.AnalyticScene("b", synthgen.Box((0, 0, 0), (0.3, 0.3, 0.3)))
    assert float(synthgen.analytic_sdf(box, np.zeros((1, 3)))[0][0]) == pytest.approx(-0.3)
    uni = synthgen.AnalyticScene("u", synthgen.Union(synthgen.Sphere(radius=0.5), synthgen.Sphere(radius=0.4)))
    p = np.random.default_rng(0).uniform(-1, 1, (200, 3))
    np.testing.assert_allclose(synthgen.analytic_sdf(uni, p)[0], synthgen.analytic_sdf(sph, p)[0])


@pytest.mark.parametrize("name", sorted(synthgen.SCENES))
def test_analytic_gradients_match_fd(name):
    scene = synthgen.make_scene(name)
    p = np.random.default_rng(1).uniform(-0.9, 0.9, (300, 3))
    _, g = scene.sdf_and_grad(p)
    h = 1e-6
    fd = np.stack([(scene.sdf(p + h * e) - scene.sdf(p - h * e)) / (2 * h) for e in np.eye(3)], -1)
    # CSG creases and the box medial axis are non-differentiable; nearly all points are smooth
    close = np.abs(g - fd).max(-1) < 1e-5
    assert close.mean() > 0.97


def test_shade_examples():
    l = np.array([0.0, 0.0, 1.0])
    assert float(synthgen.shade_pixel(l, l, 0.2, 0.8)) == pytest.approx(1.0)
    assert float(synthgen.shade_pixel(np.array([1.0, 0, 0]), l, 0.2, 0.8)) == pytest.approx(0.2)
    n = np.array([np.sqrt(0.75), 0.0, 0.5])
    assert float(synthgen.shade_pixel(n, l, 0.2, 0.8)) == pytest.approx(0.6)


def test_reprojection_consistency_without_defects():
    scene = synthgen.make_scene("sphere")
    cam_a = Camera.look_at((2.5, 0.3, 0.4), width=48, height=48, fx=synthgen.FOCAL * 48)
    cam_b = Camera.look_at((1.2, 2.1, 0.9), width=48, height=48, fx=synthgen.FOCAL * 48)
    ys, xs = np.mgrid[0:48, 0:48]
    rays = generate_rays(cam_a, xs.ravel() + 0.5, ys.ravel() + 0.5)
    hit, t = synthgen.ray_depths(scene, cam_a, xs.ravel() + 0.5, ys.ravel() + 0.5)
    p = rays.origins + t[:, None] * rays.dirs
    n = scene.normal(p)
    to_b = cam_b.position - p
    dist_b = np.linalg.norm(to_b, axis=-1)
    facing = (n * to_b).sum(-1) / dist_b > 0.3
    sel = hit & facing
    assert sel.sum() > 100
    cam_pts = (p[sel] - cam_b.position) @ cam_b.rotation
    u = cam_b.fx * cam_pts[:, 0] / cam_pts[:, 2] + cam_b.cx
    v = cam_b.fy * cam_pts[:, 1] / cam_pts[:, 2] + cam_b.cy
    hit_b, t_b = synthgen.ray_depths(scene, cam_b, u, v)
    assert hit_b.all()
    assert np.abs(t_b - dist_b[sel]).max() <= 2 * 1e-4 / 0.3


def test_shade_is_function_of_n_dot_l():
    scene = synthgen.make_scene("torus")
    light = np.array([0.4, -0.6, 0.7])
    for eye in ((2.5, 0.0, 0.5), (0.0, -2.5, 1.0)):
        cam = Camera.look_at(eye, width=32, height=32, fx=synthgen.FOCAL * 32)
        maps = synthgen.render_view(scene, cam, None, light)
        m = maps["mask"] > 0.5
        n_world = maps["normal"][m] @ cam.rotation.T
        expect = synthgen.shade_pixel(n_world, light / np.linalg.norm(light))
        np.testing.assert_allclose(maps["shade"][m][:, 0], expect, atol=1e-6)


def test_mask_matches_sphere_trace():
    scene = synthgen.make_scene("boxcsg")
    cam = Camera.look_at((2.0, 1.0, 1.2), width=32, height=32, fx=synthgen.FOCAL * 32)
    maps = synthgen.render_view(scene, cam)
    ys, xs = np.mgrid[0:32, 0:32]
    hit, _ = synthgen.ray_depths(scene, cam, xs.ravel() + 0.5, ys.ravel() + 0.5)
    np.testing.assert_array_equal(maps["mask"].ravel() > 0.5, hit)


def _digest(root):
    h = hashlib.sha256()
    for f in sorted(root.rglob("*")):
        if f.is_file():
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def test_generate_dataset(tmp_path):
    cfg = synthgen.ImperfectionConfig(n_views=16, resolution=64, light_jitter=30, pose_jitter=3, warp=0.01, seed=7)
    man = synthgen.generate_dataset("sphere", cfg, tmp_path / "a")
    assert len(man) == 16 and len(list((tmp_path / "a").glob("view_*"))) == 16
    assert dataio.load_manifest(tmp_path / "a" / "manifest.json").input_index == 0
    for v in man.views:
        assert dataio.validate_decomposition(v.image, v.albedo, v.shade).passed
    synthgen.generate_dataset("sphere", cfg, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_generate_dataset_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        synthgen.generate_dataset("sphere", synthgen.ImperfectionConfig(n_views=2, resolution=8), blocker / "sub")

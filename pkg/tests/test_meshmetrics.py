import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lift3d import metrics
from lift3d.meshing import TriangleMesh, load_obj, marching_cubes, save_obj


def sphere(r, c=(0.0, 0.0, 0.0)):
    return lambda p: np.linalg.norm(p - np.asarray(c), axis=-1) - r


@pytest.fixture(scope="module")
def sphere128():
    return marching_cubes(sphere(0.5), 128)


def test_plane_mesh_exact():
    mesh = marching_cubes(lambda p: p[:, 0], 32)
    assert len(mesh.faces) > 0
    assert np.abs(mesh.vertices[:, 0]).max() <= 1e-6


def test_sphere_mesh_oracles(sphere128):
    h = 2.0 / 127
    r = np.linalg.norm(sphere128.vertices, axis=-1)
    assert np.all(np.abs(r - 0.5) <= h * math.sqrt(3))
    assert abs(sphere128.area() - math.pi) / math.pi <= 0.02
    assert sphere128.is_watertight()


def test_sphere_normals_outward(sphere128):
    v = sphere128.vertices[sphere128.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    assert np.all((n * v.mean(1)).sum(-1) > 0)


def test_empty_level_set():
    assert marching_cubes(lambda p: np.ones(len(p)), 16).is_empty


def test_obj_roundtrip(tmp_path, sphere128):
    m = TriangleMesh(sphere128.vertices, sphere128.faces, np.full((len(sphere128.vertices), 3), 0.25))
    save_obj(m, tmp_path / "m.obj")
    back = load_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-6)
    np.testing.assert_allclose(back.colors, 0.25)


def test_chamfer_examples(sphere128):
    assert metrics.chamfer_distance(sphere128, sphere128, seed=3) == 0.0
    assert metrics.chamfer_points([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(1.0)
    big = marching_cubes(sphere(0.6), 128)
    assert metrics.chamfer_distance(sphere128, big) == pytest.approx(0.1, abs=0.005)


@given(st.integers(0, 10_000), st.integers(1, 400), st.integers(1, 400))
def test_grid_nearest_matches_brute(seed, n, m):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)) * rng.uniform(0.01, 2)
    q = rng.normal(size=(m, 3))
    np.testing.assert_allclose(metrics.nearest_distances(pts, q), metrics.brute_nearest(pts, q), atol=1e-12)


def test_iou_examples(sphere128):
    assert metrics.volume_iou(sphere(0.5), sphere(0.5), 64) == 1.0
    assert metrics.volume_iou(sphere(0.3, (-0.5, 0, 0)), sphere(0.3, (0.5, 0, 0)), 64) == 0.0
    assert metrics.volume_iou(sphere(0.5), sphere(0.25), 128) == pytest.approx(0.125, abs=0.01)
    inner = marching_cubes(sphere(0.25), 128)
    assert metrics.volume_iou(sphere128, inner, 128) == pytest.approx(0.125, abs=0.01)


def test_mesh_occupancy_agrees_with_sdf(sphere128):
    occ_mesh = metrics.occupancy_from_mesh(sphere128, 64)
    occ_sdf = metrics.occupancy_from_sdf(sphere(0.5), 64)
    assert (occ_mesh != occ_sdf).mean() < 1e-3


def test_psnr_examples():
    a = np.random.default_rng(0).random((8, 8, 3)) * 0.5
    assert metrics.psnr(a, a) == 99.0
    assert metrics.psnr(a, a + 0.1) == pytest.approx(20.0)
    assert metrics.psnr(a, a + 0.01) == pytest.approx(40.0)
    with pytest.raises(ValueError):
        metrics.psnr(a, a[:4])


def test_ssim_examples():
    rng = np.random.default_rng(1)
    a = rng.random((32, 32, 3))
    assert metrics.ssim(a, a) == pytest.approx(1.0)
    assert metrics.ssim(a, 1 - a) < 1.0
    c = np.full((16, 16), 0.5)
    assert metrics.ssim(c, c) == pytest.approx(1.0)


def test_report_json():
    import json
    rep = metrics.MetricsReport(cd=0.01, iou=None)
    assert json.loads(rep.to_json()) == {"cd": 0.01, "iou": None, "psnr": None, "ssim": None}

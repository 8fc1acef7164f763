"""Geometry and image metrics: Chamfer distance, volume IoU, PSNR, SSIM."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .meshing import TriangleMesh

log = logging.getLogger(__name__)

PSNR_CAP = 99.0


@dataclass
class MetricsReport:
    cd: float | None = None
    iou: float | None = None
    psnr: float | None = None
    ssim: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


# ------------------------------------------------------------- nearest pts
def nearest_distances(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each query to its nearest point, via a uniform grid."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("nearest_distances: empty point set")
    lo = points.min(0)
    extent = np.maximum(points.max(0) - lo, 1e-9)
    # about two points per occupied cell for surface-like sets
    cell = max(float(extent.max()) / max(math.sqrt(len(points) / 2.0), 1.0), 1e-9)
    dims = np.maximum(np.ceil(extent / cell).astype(np.int64), 1)
    ijk = np.minimum(((points - lo) / cell).astype(np.int64), dims - 1)
    cid = (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]
    order = np.argsort(cid, kind="stable")
    starts = np.zeros(int(dims.prod()) + 1, dtype=np.int64)
    np.cumsum(np.bincount(cid, minlength=int(dims.prod())), out=starts[1:])
    out = np.empty(len(queries))
    _kernels.grid_nearest(points, lo, cell, dims, order, starts, queries, out)
    return out


def brute_nearest(points, queries) -> np.ndarray:
    """Reference O(N M) nearest distances."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(queries))
    for s in range(0, len(queries), 1024):
        q = np.asarray(queries[s:s + 1024], dtype=np.float64)
        d2 = ((q[:, None, :] - points[None]) ** 2).sum(-1)
        out[s:s + 1024] = np.sqrt(d2.min(1))
    return out


def chamfer_points(a, b) -> float:
    """Half the sum of mean nearest-neighbour distances in both directions (not squared)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer_points: empty point set " + ("A" if len(a) == 0 else "B"))
    return 0.5 * (float(nearest_distances(b, a).mean()) + float(nearest_distances(a, b).mean()))


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    areas = mesh.face_areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    su = np.sqrt(u)
    b0, b1, b2 = 1.0 - su, su * (1.0 - v), su * v
    verts = mesh.vertices[mesh.faces[tri]]
    return b0[:, None] * verts[:, 0] + b1[:, None] * verts[:, 1] + b2[:, None] * verts[:, 2]


def chamfer_distance(mesh_a: TriangleMesh, mesh_b: TriangleMesh, samples: int = 16384, seed: int = 0,
                     seed_b: int | None = None) -> float:
    """Chamfer distance from ``samples`` surface points per mesh.

    Both meshes are sampled from streams seeded with ``seed`` (``seed_b`` overrides
    the second), so a mesh compared with itself scores exactly zero.
    """
    for side, m in (("A", mesh_a), ("B", mesh_b)):
        if m.is_empty:
            raise ValueError(f"chamfer_distance: mesh {side} is empty")
    pa = sample_surface(mesh_a, samples, np.random.default_rng(seed))
    pb = sample_surface(mesh_b, samples, np.random.default_rng(seed if seed_b is None else seed_b))
    return chamfer_points(pa, pb)


# -------------------------------------------------------------- occupancy
def grid_centers(resolution: int) -> np.ndarray:
    return -1.0 + (np.arange(resolution) + 0.5) * (2.0 / resolution)


def occupancy_from_sdf(fn, resolution: int = 128, chunk: int = 65536) -> np.ndarray:
    c = grid_centers(resolution)
    gx, gy, gz = np.meshgrid(c, c, c, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], -1)
    vals = np.concatenate([np.asarray(fn(pts[s:s + chunk])).reshape(-1) for s in range(0, len(pts), chunk)])
    return (vals <= 0).reshape(resolution, resolution, resolution)


def occupancy_from_mesh(mesh: TriangleMesh, resolution: int = 128) -> np.ndarray:
    """Inside test by crossing parity along +x lines through the cell centres (watertight meshes)."""
    c = grid_centers(resolution)
    occ = np.zeros((resolution,) * 3, dtype=bool)
    if mesh.is_empty:
        return occ
    # an irrational nudge keeps query lines off mesh edges and vertices
    ys = c + 1.1e-9 * math.sqrt(2.0)
    zs = c + 1.3e-9 * math.sqrt(3.0)
    verts = np.ascontiguousarray(mesh.vertices)
    faces = np.ascontiguousarray(mesh.faces)
    counts = np.zeros(resolution * resolution, dtype=np.int64)
    _kernels.mesh_crossings(verts, faces, ys, zs, counts, np.zeros(0), False)
    offsets = np.zeros_like(counts)
    np.cumsum(counts[:-1], out=offsets[1:])
    xs = np.empty(int(counts.sum()))
    _kernels.mesh_crossings(verts, faces, ys, zs, offsets, xs, True)
    for line in np.flatnonzero(counts):
        j, k = divmod(int(line), resolution)
        hits = np.sort(xs[offsets[line]:offsets[line] + counts[line]])
        n_before = np.searchsorted(hits, c)
        occ[:, j, k] = n_before % 2 == 1
    return occ


def occupancy(source, resolution: int = 128) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source.astype(bool)
    if isinstance(source, TriangleMesh):
        return occupancy_from_mesh(source, resolution)
    return occupancy_from_sdf(source, resolution)


def volume_iou(a, b, resolution: int = 128) -> float:
    """IoU of two occupancies (boolean grids, SDF callables or watertight meshes)."""
    oa, ob = occupancy(a, resolution), occupancy(b, resolution)
    union = np.logical_or(oa, ob).sum()
    if union == 0:
        log.info("volume_iou: both occupancies empty, returning 1")
        return 1.0
    return float(np.logical_and(oa, ob).sum() / union)


# ----------------------------------------------------------------- images
def _check_pair(a, b, name):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: image shapes differ, {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _check_pair(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _gray(img):
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    return img.reshape(img.shape[0], img.shape[1])


def _valid_filter(n: int, win: np.ndarray) -> np.ndarray:
    k = len(win)
    m = np.zeros((n - k + 1, n))
    for i in range(n - k + 1):
        m[i, i:i + k] = win
    return m


def ssim(a, b, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid windows of the grey-scale images (unit dynamic range)."""
    a, b = _check_pair(a, b, "ssim")
    x, y = _gray(a), _gray(b)
    h, w = x.shape
    if h < window or w < window:
        raise ValueError(f"ssim: image {w}x{h} smaller than the {window}x{window} window")
    g = np.exp(-0.5 * ((np.arange(window) - (window - 1) / 2.0) / sigma) ** 2)
    g /= g.sum()
    fy, fx = _valid_filter(h, g), _valid_filter(w, g)

    def filt(img):
        return fy @ img @ fx.T

    c1, c2 = 0.01**2, 0.03**2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))

"""Isosurface extraction and OBJ export."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    colors: np.ndarray | None = None  # (V, 3) in [0, 1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise IndexError("face index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=-1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def edge_use_counts(self) -> np.ndarray:
        """How many faces share each undirected edge."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return not self.is_empty and bool(np.all(self.edge_use_counts() == 2))


def sdf_grid(fn, resolution: int, bounds=(-1.0, 1.0), chunk: int = 65536, workers: int = 1) -> np.ndarray:
    """Evaluate ``fn`` on a resolution^3 lattice spanning ``bounds`` (vertices, x-major)."""
    lo, hi = bounds
    axis = np.linspace(lo, hi, resolution)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], -1)
    starts = range(0, len(pts), chunk)

    def run(s):
        return np.asarray(fn(pts[s:s + chunk]), dtype=np.float64).reshape(-1)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))  # map keeps submission order
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts).reshape(resolution, resolution, resolution)


def marching_cubes(fn, resolution: int = 128, bounds=(-1.0, 1.0), values: np.ndarray | None = None,
                   workers: int = 1) -> TriangleMesh:
    """Zero level set of ``fn`` (negative inside) as an outward-facing triangle mesh.

    Pass precomputed lattice ``values`` to skip evaluation. An SDF without a
    zero crossing yields an empty mesh.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    vol = values if values is not None else sdf_grid(fn, resolution, bounds, workers=workers)
    if not (vol.min() < 0.0 < vol.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    lo, hi = bounds
    h = (hi - lo) / (resolution - 1)
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, spacing=(h, h, h),
                                                gradient_direction="descent", allow_degenerate=False)
    return TriangleMesh(verts + lo, faces)


def save_obj(mesh: TriangleMesh, path):
    """ASCII OBJ; vertex colours, when present, extend each v line to six numbers."""
    lines = []
    if mesh.colors is not None:
        for v, c in zip(mesh.vertices, mesh.colors):
            lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {c[0]:.4f} {c[1]:.4f} {c[2]:.4f}")
    else:
        lines.extend(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}" for v in mesh.vertices)
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces)
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriangleMesh:
    verts, cols, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
            if len(parts) >= 7:
                cols.append([float(x) for x in parts[4:7]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    colors = np.asarray(cols) if cols and len(cols) == len(verts) else None
    return TriangleMesh(np.asarray(verts).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3), colors)

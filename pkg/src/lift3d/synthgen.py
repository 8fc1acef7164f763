"""Analytic CSG scenes rendered into deliberately inconsistent multi-view datasets.

Each view can carry three defects: a smooth per-view warp of the geometry,
a jittered light direction and a perturbed (but unreported) camera pose.
Image, albedo, shade and normal maps all come from the same warped surface,
so image = albedo * shade holds exactly before quantisation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .renderer import Camera, generate_rays, image_rays


# -------------------------------------------------------------- primitives
@dataclass
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.5

    def eval(self, p):
        d = p - np.asarray(self.center)
        n = np.linalg.norm(d, axis=-1)
        safe = np.where(n > 0, n, 1.0)[..., None]
        grad = np.where(n[..., None] > 0, d / safe, np.array([0.0, 0.0, 1.0]))
        return n - self.radius, grad


@dataclass
class Box:
    center: tuple = (0.0, 0.0, 0.0)
    half: tuple = (0.3, 0.3, 0.3)

    def eval(self, p):
        d = p - np.asarray(self.center)
        q = np.abs(d) - np.asarray(self.half)
        outside = np.maximum(q, 0.0)
        out_len = np.linalg.norm(outside, axis=-1)
        inner = np.minimum(q.max(-1), 0.0)
        sdf = out_len + inner
        sign = np.where(d >= 0, 1.0, -1.0)
        g_out = outside / np.where(out_len > 0, out_len, 1.0)[..., None] * sign
        axis = q.argmax(-1)
        g_in = np.zeros_like(p)
        np.put_along_axis(g_in, axis[..., None], np.take_along_axis(sign, axis[..., None], -1), -1)
        grad = np.where((out_len > 0)[..., None], g_out, g_in)
        return sdf, grad


@dataclass
class Torus:
    """Torus around the z axis."""

    center: tuple = (0.0, 0.0, 0.0)
    major: float = 0.45
    minor: float = 0.15

    def eval(self, p):
        d = p - np.asarray(self.center)
        rxy = np.linalg.norm(d[..., :2], axis=-1)
        qx = rxy - self.major
        qz = d[..., 2]
        ql = np.sqrt(qx * qx + qz * qz)
        sdf = ql - self.minor
        safe_q = np.where(ql > 0, ql, 1.0)
        safe_r = np.where(rxy > 0, rxy, 1.0)
        grad = np.stack([qx / safe_q * d[..., 0] / safe_r, qx / safe_q * d[..., 1] / safe_r, qz / safe_q], -1)
        return sdf, grad


@dataclass
class Union:
    a: object
    b: object

    def eval(self, p):
        fa, ga = self.a.eval(p)
        fb, gb = self.b.eval(p)
        pick = fa <= fb
        return np.where(pick, fa, fb), np.where(pick[..., None], ga, gb)


@dataclass
class Subtract:
    """a minus b: max(f_a, -f_b)."""

    a: object
    b: object

    def eval(self, p):
        fa, ga = self.a.eval(p)
        fb, gb = self.b.eval(p)
        pick = fa >= -fb
        return np.where(pick, fa, -fb), np.where(pick[..., None], ga, -gb)


@dataclass
class Checker:
    cell: float = 0.2
    color_a: tuple = (0.85, 0.35, 0.25)
    color_b: tuple = (0.25, 0.55, 0.85)

    def __call__(self, p):
        parity = np.floor(np.asarray(p) / self.cell).astype(np.int64).sum(-1) % 2
        return np.where(parity[..., None] == 0, np.asarray(self.color_a), np.asarray(self.color_b))


@dataclass
class AnalyticScene:
    name: str
    root: object
    albedo: Checker = field(default_factory=Checker)

    def sdf(self, p) -> np.ndarray:
        return self.root.eval(np.asarray(p, dtype=np.float64))[0]

    def sdf_and_grad(self, p):
        return self.root.eval(np.asarray(p, dtype=np.float64))

    def normal(self, p) -> np.ndarray:
        g = self.sdf_and_grad(p)[1]
        return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)


def analytic_sdf(scene: AnalyticScene, p):
    """Signed distance and analytic gradient at points ``p`` (..., 3)."""
    return scene.sdf_and_grad(p)


def make_scene(name: str) -> AnalyticScene:
    if name == "sphere":
        return AnalyticScene(name, Sphere(radius=0.5))
    if name == "boxcsg":
        return AnalyticScene(name, Subtract(Box(half=(0.35, 0.35, 0.35)), Sphere(radius=0.45)))
    if name == "torus":
        return AnalyticScene(name, Torus(major=0.45, minor=0.15))
    raise ValueError(f"unknown scene {name!r} (choose sphere, boxcsg or torus)")


SCENES = ("sphere", "boxcsg", "torus")

# focal length in image widths; frames the unit-radius working volume at radius 2.5
FOCAL = 1.8


# ----------------------------------------------------------------- defects
@dataclass
class ImperfectionConfig:
    n_views: int = 16
    resolution: int = 64
    radius: float = 2.5
    elevation: tuple = (-15.0, 45.0)  # degrees
    light_jitter: float = 0.0  # half-angle, degrees
    pose_jitter: float = 0.0  # half-angle, degrees
    warp: float = 0.0  # amplitude a
    warp_freq: float = 3.0  # k
    ambient: float = 0.2
    intensity: float = 0.8
    light: tuple = (0.4, -0.6, 0.7)
    seed: int = 0

    def __post_init__(self):
        if self.n_views < 2:
            raise ValueError(f"need at least 2 views, got {self.n_views}")
        for name in ("light_jitter", "pose_jitter", "warp", "warp_freq"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class ViewDefects:
    """Per-view perturbations; all-zero means a faithful render."""

    warp: float = 0.0
    warp_freq: float = 3.0
    phase: tuple = (0.0, 0.0, 0.0)
    light_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    pose_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))


def random_rotation(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle uniform in [0, max_deg]."""
    if max_deg <= 0:
        return np.eye(3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = math.radians(rng.uniform(0.0, max_deg))
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(ang) * k + (1 - math.cos(ang)) * (k @ k)


def shade_pixel(n, light, ambient: float = 0.2, intensity: float = 0.8):
    """ambient + intensity * max(0, n . l), clamped to [0, 1]."""
    ndl = np.sum(np.asarray(n) * np.asarray(light), axis=-1)
    return np.clip(ambient + intensity * np.maximum(ndl, 0.0), 0.0, 1.0)


def _warp(p, d: ViewDefects):
    return p + d.warp * np.sin(d.warp_freq * p + np.asarray(d.phase))


def warped_sdf(scene: AnalyticScene, p, d: ViewDefects):
    """f(p + a sin(k p + phi)) and its gradient by the chain rule."""
    f, g = scene.sdf_and_grad(_warp(p, d))
    jac_diag = 1.0 + d.warp * d.warp_freq * np.cos(d.warp_freq * p + np.asarray(d.phase))
    return f, g * jac_diag


def sphere_trace(scene: AnalyticScene, origins, dirs, near, far, defects: ViewDefects,
                 max_steps: int = 256, eps: float = 1e-4):
    """Per-ray hit flag and depth against the warped SDF."""
    # the warp can stretch distances by up to 1 + a k, so shrink steps accordingly
    step_scale = 1.0 / (1.0 + defects.warp * defects.warp_freq)
    t = near.copy()
    hit = np.zeros(len(t), dtype=bool)
    active = far > near
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        p = origins[idx] + t[idx, None] * dirs[idx]
        f, _ = warped_sdf(scene, p, defects)
        done = np.abs(f) < eps
        hit[idx[done]] = True
        t[idx[~done]] += f[~done] * step_scale
        escaped = t[idx] > far[idx]
        active[idx[done | escaped]] = False
    return hit, t


def render_view(scene: AnalyticScene, camera: Camera, defects: ViewDefects | None = None,
                light=(0.4, -0.6, 0.7), ambient: float = 0.2, intensity: float = 0.8) -> dict:
    """Image, albedo, shade, camera-space normal, mask and depth for one view.

    ``defects.pose_rotation`` orbits the rendering camera around the origin;
    the caller keeps reporting the unperturbed ``camera``.
    """
    d = defects or ViewDefects()
    c2w = camera.c2w.copy()
    c2w[:3, :3] = d.pose_rotation @ c2w[:3, :3]
    c2w[:3, 3] = d.pose_rotation @ c2w[:3, 3]
    cam = Camera(camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height, c2w)
    rays = image_rays(cam)
    hit, t = sphere_trace(scene, rays.origins, rays.dirs, rays.near, rays.far, d)
    h, w = camera.height, camera.width
    p = rays.origins + t[:, None] * rays.dirs
    _, g = warped_sdf(scene, p, d)
    n = g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
    l = d.light_rotation @ (np.asarray(light, dtype=np.float64) / np.linalg.norm(light))
    albedo = scene.albedo(_warp(p, d))
    shade = shade_pixel(n, l, ambient, intensity)
    m = hit[:, None]
    albedo = np.where(m, albedo, 1.0)
    shade = np.where(hit, shade, 1.0)
    image = albedo * shade[:, None]
    # normals are expressed in the frame of the reported camera
    n_cam = np.where(m, n @ camera.rotation, 0.0)
    return {
        "image": image.reshape(h, w, 3),
        "albedo": albedo.reshape(h, w, 3),
        "shade": shade.reshape(h, w, 1),
        "normal": n_cam.reshape(h, w, 3),
        "mask": hit.reshape(h, w).astype(np.float64),
        "depth": np.where(hit, t, 0.0).reshape(h, w),
    }


def view_cameras(cfg: ImperfectionConfig) -> list[Camera]:
    rng = np.random.default_rng([cfg.seed, 11])
    cams = []
    for i in range(cfg.n_views):
        az = 2 * math.pi * i / cfg.n_views + rng.uniform(-0.15, 0.15)
        el = math.radians(rng.uniform(*cfg.elevation))
        eye = cfg.radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        cams.append(Camera.look_at(eye, width=cfg.resolution, height=cfg.resolution,
                                   fx=FOCAL * cfg.resolution))
    return cams


def view_defects(cfg: ImperfectionConfig, index: int) -> ViewDefects:
    if index == 0:
        return ViewDefects(warp_freq=cfg.warp_freq)
    rng = np.random.default_rng([cfg.seed, 13, index])
    return ViewDefects(
        warp=cfg.warp,
        warp_freq=cfg.warp_freq,
        phase=tuple(rng.uniform(0, 2 * math.pi, 3)),
        light_rotation=random_rotation(rng, cfg.light_jitter),
        pose_rotation=random_rotation(rng, cfg.pose_jitter),
    )


def scene_to_dict(scene: AnalyticScene) -> dict:
    return {"name": scene.name, "albedo": asdict(scene.albedo)}


def generate_dataset(scene: AnalyticScene | str, cfg: ImperfectionConfig, out_dir) -> dataio.SceneManifest:
    """Render every view, write maps plus ``manifest.json``; view 0 is the defect-free input."""
    if isinstance(scene, str):
        scene = make_scene(scene)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise OSError(f"cannot write dataset to {out}: {e}") from None
    entries = []
    for i, cam in enumerate(view_cameras(cfg)):
        maps = render_view(scene, cam, view_defects(cfg, i), cfg.light, cfg.ambient, cfg.intensity)
        vdir = out / f"view_{i:02d}"
        vdir.mkdir(exist_ok=True)
        dataio.save_png(vdir / "image.png", maps["image"])
        dataio.save_png(vdir / "albedo.png", maps["albedo"])
        dataio.save_png(vdir / "shade.png", maps["shade"])
        dataio.save_png(vdir / "mask.png", maps["mask"])
        dataio.save_nfm(vdir / "normal.nfm", maps["normal"])
        dataio.save_nfm(vdir / "depth.nfm", maps["depth"])
        rel = f"view_{i:02d}"
        entries.append({
            "image": f"{rel}/image.png", "albedo": f"{rel}/albedo.png", "shade": f"{rel}/shade.png",
            "normal": f"{rel}/normal.nfm", "mask": f"{rel}/mask.png", "camera": cam.to_dict(),
            "is_input": i == 0,
        })
    dataio.write_manifest(out / "manifest.json", scene.name, entries)
    cfg_doc = asdict(cfg)
    (out / "synthetic.json").write_text(json.dumps({"scene": scene_to_dict(scene), "config": cfg_doc}, indent=1))
    return dataio.load_manifest(out / "manifest.json")


def novel_cameras(n: int, seed: int, radius: float = 2.5, resolution: int = 64,
                  elevation=(-15.0, 45.0)) -> list[Camera]:
    """Random look-at cameras for held-out evaluation."""
    rng = np.random.default_rng([seed, 17])
    cams = []
    for _ in range(n):
        az = rng.uniform(0, 2 * math.pi)
        el = math.radians(rng.uniform(*elevation))
        eye = radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        cams.append(Camera.look_at(eye, width=resolution, height=resolution, fx=FOCAL * resolution))
    return cams


def ray_depths(scene: AnalyticScene, camera: Camera, px, py, defects: ViewDefects | None = None):
    """Sphere-traced depth for individual pixel coordinates (used by reprojection checks)."""
    rays = generate_rays(camera, px, py)
    return sphere_trace(scene, rays.origins, rays.dirs, rays.near, rays.far, defects or ViewDefects())

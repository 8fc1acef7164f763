"""Differentiable SDF volume rendering inside the unit bounding sphere."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .autodiff import ops as T


@dataclass
class Camera:
    """Pinhole camera. ``c2w`` is camera-to-world (4x4); the camera looks along +z, image y points down."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: np.ndarray

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        r = self.rotation
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-4:
            raise ValueError("camera rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), *, width=64, height=64,
                fx=None, fy=None):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-8:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        c2w = np.eye(4)
        c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, down, fwd, eye
        fx = fx if fx is not None else 1.2 * width
        fy = fy if fy is not None else fx
        return cls(fx, fy, width / 2.0, height / 2.0, width, height, c2w)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width,
                "height": self.height, "c2w": [float(v) for v in self.c2w.reshape(-1)]}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]),
                   int(d["height"]), np.asarray(d["c2w"], dtype=np.float64))

    def scaled(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height, self.c2w)


@dataclass
class RayBatch:
    origins: np.ndarray  # (R, 3)
    dirs: np.ndarray  # (R, 3) unit
    near: np.ndarray  # (R,)
    far: np.ndarray  # (R,)
    hit: np.ndarray  # (R,) bool, False when the ray misses the bounding sphere

    def __len__(self):
        return len(self.dirs)


def intersect_unit_sphere(origins, dirs):
    """Entry/exit depths of rays against |p| = 1; misses get a short dummy interval."""
    b = (origins * dirs).sum(-1)
    c = (origins * origins).sum(-1) - 1.0
    disc = b * b - c
    hit = disc > 0
    root = np.sqrt(np.maximum(disc, 0.0))
    near = np.maximum(-b - root, 0.0)
    far = -b + root
    hit &= far > near
    closest = np.maximum(-b, 0.0)
    near = np.where(hit, near, closest)
    far = np.where(hit, far, closest + 1e-3)
    return near, far, hit


def generate_rays(camera: Camera, px, py) -> RayBatch:
    """Rays through pixel coordinates (pass x + 0.5 for pixel centres)."""
    px = np.asarray(px, dtype=np.float64).reshape(-1)
    py = np.asarray(py, dtype=np.float64).reshape(-1)
    d_cam = np.stack([(px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, np.ones_like(px)], -1)
    dirs = d_cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    near, far, hit = intersect_unit_sphere(origins, dirs)
    return RayBatch(origins, dirs, near, far, hit)


def generate_ray(camera: Camera, x: float, y: float) -> RayBatch:
    return generate_rays(camera, [x], [y])


def image_rays(camera: Camera) -> RayBatch:
    ys, xs = np.mgrid[0:camera.height, 0:camera.width]
    return generate_rays(camera, xs.reshape(-1) + 0.5, ys.reshape(-1) + 0.5)


def subset(rays: RayBatch, idx) -> RayBatch:
    return RayBatch(rays.origins[idx], rays.dirs[idx], rays.near[idx], rays.far[idx], rays.hit[idx])


# ------------------------------------------------------------------ sampling
def stratified_depths(near, far, n: int, rng: np.random.Generator | None) -> np.ndarray:
    """One depth per equal stratum of [near, far]; stratum centres when ``rng`` is None."""
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    u = rng.random((near.shape[0], n)) if rng is not None else np.full((near.shape[0], n), 0.5)
    return near + (far - near) * (np.arange(n) + u) / n


def sample_pdf(bins: np.ndarray, weights: np.ndarray, n: int, rng: np.random.Generator | None):
    """Inverse-CDF samples from the piecewise-constant density ``weights`` over ``bins``.

    ``bins`` is (R, M+1) interval edges, ``weights`` is (R, M).
    """
    w = np.asarray(weights, dtype=np.float64) + 1e-5
    pdf = w / w.sum(-1, keepdims=True)
    cdf = np.concatenate([np.zeros((pdf.shape[0], 1)), np.cumsum(pdf, -1)], -1)
    cdf[:, -1] = 1.0
    if rng is None:
        u = np.broadcast_to((np.arange(n) + 0.5) / n, (pdf.shape[0], n)).copy()
    else:
        u = rng.random((pdf.shape[0], n))
    idx = (u[..., None] >= cdf[:, None, :]).sum(-1)
    idx = np.clip(idx, 1, cdf.shape[1] - 1)
    lo, hi = idx - 1, idx
    c_lo = np.take_along_axis(cdf, lo, -1)
    c_hi = np.take_along_axis(cdf, hi, -1)
    b_lo = np.take_along_axis(bins, lo, -1)
    b_hi = np.take_along_axis(bins, hi, -1)
    span = np.where(c_hi - c_lo < 1e-12, 1.0, c_hi - c_lo)
    return b_lo + (u - c_lo) / span * (b_hi - b_lo)


def merge_depths(*depths) -> np.ndarray:
    t = np.sort(np.concatenate(depths, axis=-1), axis=-1)
    # a vanishing ramp turns ties into a strict order
    return t + np.arange(t.shape[-1]) * 1e-7


def sample_ray(ray: RayBatch, n_coarse: int, n_fine: int, seed: int | np.random.Generator = 0,
               weight_fn=None) -> np.ndarray:
    """Coarse stratified depths plus ``n_fine`` importance samples drawn from ``weight_fn``.

    ``weight_fn(depths)`` returns per-interval weights (R, n_coarse - 1); uniform
    weights are used when it is None.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t_c = stratified_depths(ray.near, ray.far, n_coarse, rng)
    if n_fine == 0:
        return t_c
    w = weight_fn(t_c) if weight_fn is not None else np.ones((t_c.shape[0], n_coarse - 1))
    t_f = sample_pdf(t_c, w, n_fine, rng)
    return merge_depths(t_c, t_f)


# ------------------------------------------------------------------ opacity
def alpha_from_sdf(f_i, f_next, inv_std):
    """Discrete opacity max((Phi(f_i) - Phi(f_next)) / Phi(f_i), 0), Phi(x) = sigmoid(s x)."""
    if not any(isinstance(v, Tensor) for v in (f_i, f_next, inv_std)):
        s = float(inv_std)
        phi_i = 1.0 / (1.0 + np.exp(-np.clip(np.asarray(f_i, dtype=np.float64) * s, -60, 60)))
        phi_n = 1.0 / (1.0 + np.exp(-np.clip(np.asarray(f_next, dtype=np.float64) * s, -60, 60)))
        return np.maximum((phi_i - phi_n) / phi_i, 0.0)
    phi_i = T.sigmoid(T.mul(f_i, inv_std))
    phi_n = T.sigmoid(T.mul(f_next, inv_std))
    return T.relu(T.div(phi_i - phi_n, phi_i))


def opaque_density(f, df_dt, inv_std):
    """Continuous opaque density max(-(dPhi/dt) / Phi, 0); reference for consistency checks."""
    f = np.asarray(f, dtype=np.float64)
    x = np.clip(inv_std * f, -60, 60)
    phi = 1.0 / (1.0 + np.exp(-x))
    dphi_dt = inv_std * phi * (1.0 - phi) * np.asarray(df_dt, dtype=np.float64)
    return np.maximum(-dphi_dt / phi, 0.0)


def composite(alpha, *values):
    """Front-to-back accumulation.

    Returns ``(weights, transmittance, sums)`` where ``sums[k] = sum_i w_i values[k]_i``
    along the last sample axis. Works on tensors and on plain arrays.
    """
    if isinstance(alpha, Tensor) or any(isinstance(v, Tensor) for v in values):
        alpha = alpha if isinstance(alpha, Tensor) else Tensor(alpha)
        trans = T.cumprod_exclusive(1.0 - alpha, axis=-1)
        w = trans * alpha
        sums = []
        for v in values:
            v = v if isinstance(v, Tensor) else Tensor(v)
            sums.append((w.reshape(*w.shape, 1) * v).sum(axis=-2) if v.ndim == w.ndim + 1 else (w * v).sum(axis=-1))
        return w, trans, sums
    alpha = np.asarray(alpha, dtype=np.float64)
    trans = np.ones_like(alpha)
    if alpha.shape[-1] > 1:
        trans[..., 1:] = np.cumprod(1.0 - alpha[..., :-1], axis=-1)
    w = trans * alpha
    sums = []
    for v in values:
        v = np.asarray(v)
        sums.append((w[..., None] * v).sum(-2) if v.ndim == w.ndim + 1 else (w * v).sum(-1))
    return w, trans, sums


# ------------------------------------------------------------------ render
@dataclass
class RenderOutput:
    color: Tensor  # (R, 3) composited over white
    raw_color: Tensor  # (R, 3) sum w c before compositing
    normal: Tensor  # (R, 3) sum w grad f, not renormalised
    opacity: Tensor  # (R,)
    depth: np.ndarray  # (R,)
    transient_color: Tensor | None  # (R, 3) sum w c_tau
    residual: Tensor | None  # per-sample transient SDF offsets
    weights: np.ndarray  # (R, n-1)
    transmittance: np.ndarray  # (R, n-1)

    def surface_points(self, rays: RayBatch) -> np.ndarray:
        return rays.origins + self.depth[:, None] * rays.dirs


def _coarse_weights(scene, rays: RayBatch, frame, inv_std: float):
    def weight_fn(t):
        pts = (rays.origins[:, None, :] + t[..., None] * rays.dirs[:, None, :]).reshape(-1, 3)
        with no_grad():
            sdf = scene.geometry(pts, frame, with_grad=False).sdf.data.reshape(t.shape)
        alpha = alpha_from_sdf(sdf[:, :-1], sdf[:, 1:], inv_std) * rays.hit[:, None]
        return composite(alpha)[0]

    return weight_fn


def render_rays(scene, rays: RayBatch, *, stage: str = "geometry", frame: int | None = None,
                n_coarse: int = 64, n_fine: int = 64, rng: np.random.Generator | None = None,
                inv_std=None) -> RenderOutput:
    """Volume-render a ray batch through ``scene`` (anything with ``geometry``/``color``/``inv_std``).

    ``stage`` selects the colour: albedo for "geometry", shaded texture for "texture".
    Rays that miss the bounding sphere contribute nothing and show the white background.
    """
    if stage not in ("geometry", "texture"):
        raise ValueError(f"unknown stage {stage!r}")
    if inv_std is None:
        inv_std = scene.inv_std
    s_val = float(inv_std.data) if isinstance(inv_std, Tensor) else float(inv_std)
    n_rays = len(rays)
    t_c = stratified_depths(rays.near, rays.far, n_coarse, rng)
    if n_fine > 0:
        w_c = _coarse_weights(scene, rays, frame, s_val)(t_c)
        t = merge_depths(t_c, sample_pdf(t_c, w_c, n_fine, rng))
    else:
        t = t_c
    n = t.shape[1]
    pts = (rays.origins[:, None, :] + t[..., None] * rays.dirs[:, None, :]).reshape(-1, 3)
    geo = scene.geometry(pts, frame, with_grad=True)
    sdf = geo.sdf.reshape(n_rays, n)
    alpha = alpha_from_sdf(sdf[:, :-1], sdf[:, 1:], inv_std)
    alpha = alpha * rays.hit[:, None].astype(alpha.dtype)

    # each interval is represented by the average of its endpoint attributes
    grad = geo.grad.reshape(n_rays, n, 3)
    grad_mid = (grad[:, :-1] + grad[:, 1:]) * 0.5
    feat = geo.feature.reshape(n_rays, n, -1)
    feat_mid = (feat[:, :-1] + feat[:, 1:]) * 0.5
    t_mid = 0.5 * (t[:, :-1] + t[:, 1:])
    p_mid = rays.origins[:, None, :] + t_mid[..., None] * rays.dirs[:, None, :]
    m = n_rays * (n - 1)
    dirs = np.broadcast_to(rays.dirs[:, None, :], (n_rays, n - 1, 3)).reshape(m, 3)
    col = scene.color(p_mid.reshape(m, 3).astype(alpha.dtype), dirs, grad_mid.reshape(m, 3),
                      feat_mid.reshape(m, feat.shape[-1]), frame, stage)
    values = [col.combined.reshape(n_rays, n - 1, 3), grad_mid]
    if col.transient is not None:
        values.append(col.transient.reshape(n_rays, n - 1, 3))
    w, trans, sums = composite(alpha, *values)
    opacity = w.sum(axis=-1)
    raw = sums[0]
    color = raw + (1.0 - opacity).reshape(n_rays, 1)
    wd = w.data.astype(np.float64)
    depth = (wd * t_mid).sum(-1) / np.maximum(wd.sum(-1), 1e-6)
    return RenderOutput(
        color=color,
        raw_color=raw,
        normal=sums[1],
        opacity=opacity,
        depth=depth,
        transient_color=sums[2] if col.transient is not None else None,
        residual=geo.residual,
        weights=w.data,
        transmittance=trans.data,
    )


def render_image(scene, camera: Camera, *, stage="texture", frame=None, n_coarse=64, n_fine=64,
                 chunk=4096, seed=0, workers: int = 1) -> dict:
    """Gradient-free full-image render; returns numpy color/normal/opacity/depth maps.

    Each chunk draws from its own seeded stream, so the result does not depend on ``workers``.
    """
    rays = image_rays(camera)
    starts = list(range(0, len(rays), chunk))

    def run(ci):
        idx = np.arange(starts[ci], min(starts[ci] + chunk, len(rays)))
        with no_grad():
            out = render_rays(scene, subset(rays, idx), stage=stage, frame=frame, n_coarse=n_coarse,
                              n_fine=n_fine, rng=np.random.default_rng([seed, ci]))
        return out.color.data, out.normal.data, out.opacity.data, out.depth

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(ci) for ci in range(len(starts))]
    h, w = camera.height, camera.width
    return {
        "color": np.concatenate([p[0] for p in parts]).reshape(h, w, 3),
        "normal": np.concatenate([p[1] for p in parts]).reshape(h, w, 3),
        "opacity": np.concatenate([p[2] for p in parts]).reshape(h, w),
        "depth": np.concatenate([p[3] for p in parts]).reshape(h, w),
    }

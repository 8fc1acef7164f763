"""Two-stage training, mesh extraction, rendering and evaluation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, losses, metrics, semantic, synthgen
from .autodiff import AdamState, ParameterStore, Tensor, adam_step, backward, load_checkpoint, no_grad, save_checkpoint
from .config import TrainConfig
from .fields import NeuralScene
from .meshing import TriangleMesh, marching_cubes, sdf_grid
from .renderer import Camera, generate_rays, image_rays, render_image, render_rays

log = logging.getLogger(__name__)

OPT_PREFIX = "optim/"
LOG_FIELDS = ("iteration", "rgb", "norm", "eik", "sem", "mask", "trans", "total", "inv_std", "wall_time")
# parameters that stage 2 keeps training; everything else is frozen
STAGE2_TRAINABLE = ("texture.", "embed.color")


class TrainingHalted(RuntimeError):
    """Raised when a loss or gradient turns non-finite; the last good state is checkpointed."""


# ----------------------------------------------------------------- helpers
def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a disc of the given pixel radius."""
    m = np.asarray(mask) > 0.5
    if radius <= 0:
        return m
    h, w = m.shape
    out = m.copy()
    pad = np.pad(m, radius)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx * dx + dy * dy <= radius * radius:
                out |= pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
    return out


@dataclass
class ViewData:
    camera: Camera
    reference: np.ndarray  # (H*W, 3) colour target
    mask: np.ndarray | None  # (H*W,)
    normal: np.ndarray | None  # (H*W, 3) world space
    fg_pool: np.ndarray  # pixel ids inside the dilated mask
    bg_pool: np.ndarray  # the rest
    weight: float


def prepare_views(cfg: TrainConfig, manifest: dataio.SceneManifest, stage: int) -> list[ViewData]:
    positions = [v.camera.position for v in manifest.views]
    weights = losses.input_view_weights(positions, manifest.input_index, cfg.rgb_weight_mode)
    out = []
    for v, w in zip(manifest.views, weights):
        ref = v.image
        if stage == 1 and cfg.supervision == "albedo":
            if v.albedo is not None:
                ref = v.albedo
            else:
                log.warning("view %d has no albedo map; supervising with the raw image", v.index)
        n_px = v.height * v.width
        mask = None if v.mask is None else v.mask.reshape(-1)
        if mask is None:
            fg, bg = np.arange(n_px), np.zeros(0, dtype=np.int64)
        else:
            region = dilate(v.mask, cfg.mask_dilation).reshape(-1)
            fg, bg = np.flatnonzero(region), np.flatnonzero(~region)
        normal = None if v.normal is None else v.normal.reshape(-1, 3)
        out.append(ViewData(v.camera, ref.reshape(-1, 3), mask, normal, fg, bg, float(w)))
    return out


def sample_pixels(view: ViewData, n: int, frac_bg: float, rng: np.random.Generator) -> np.ndarray:
    n_bg = int(round(n * frac_bg)) if len(view.bg_pool) else 0
    n_fg = n - n_bg if len(view.fg_pool) else 0
    n_bg = n - n_fg
    parts = []
    if n_fg:
        parts.append(view.fg_pool[rng.integers(0, len(view.fg_pool), n_fg)])
    if n_bg:
        parts.append(view.bg_pool[rng.integers(0, len(view.bg_pool), n_bg)])
    return np.concatenate(parts)


def opt_state_entries(state: AdamState) -> dict:
    entries = {}
    for name in state.m:
        entries[f"{OPT_PREFIX}m/{name}"] = state.m[name]
        entries[f"{OPT_PREFIX}v/{name}"] = state.v[name]
    return entries


def save_training_checkpoint(path, scene: NeuralScene, state: AdamState, meta: dict):
    combined = ParameterStore()
    for name, p in scene.store.items():
        combined.add(name, p.tensor.data, p.trainable, dtype=p.tensor.dtype)
    for name, arr in opt_state_entries(state).items():
        combined.add(name, arr, False, dtype=arr.dtype)
    save_checkpoint(combined, path, {**meta, "adam_step": state.step})


def load_training_checkpoint(path):
    """(parameter store, Adam moments keyed by parameter, metadata)."""
    store, meta = load_checkpoint(path)
    params = ParameterStore()
    m, v = {}, {}
    for name, p in store.items():
        if name.startswith(OPT_PREFIX + "m/"):
            m[name[len(OPT_PREFIX) + 2:]] = p.tensor.data.copy()
        elif name.startswith(OPT_PREFIX + "v/"):
            v[name[len(OPT_PREFIX) + 2:]] = p.tensor.data.copy()
        else:
            params.add(name, p.tensor.data, p.trainable, dtype=p.tensor.dtype)
    return params, (m, v), meta


def build_scene(cfg: TrainConfig, n_images: int, store: ParameterStore | None = None) -> NeuralScene:
    scene = NeuralScene(cfg.field, n_images, seed=cfg.seed, transient=cfg.transient)
    if store is not None:
        for name in scene.store.names():
            if name not in store:
                raise KeyError(f"checkpoint lacks parameter {name!r}")
            scene.store.set_value(name, store[name].data)
    return scene


# ------------------------------------------------------------------ trainer
@dataclass
class TrainResult:
    scene: NeuralScene
    history: list = field(default_factory=list)
    checkpoint: Path | None = None
    iteration: int = 0
    optimizer: AdamState | None = None


class Trainer:
    """Runs one stage. Stage 2 needs the stage-1 parameters in ``init_store``."""

    def __init__(self, cfg: TrainConfig, manifest: dataio.SceneManifest, init_store: ParameterStore | None = None):
        self.cfg = cfg
        self.manifest = manifest
        self.stage = cfg.stage
        if self.stage == 2 and init_store is None:
            raise ValueError("stage 2 needs a stage-1 checkpoint")
        self.views = prepare_views(cfg, manifest, self.stage)
        self.scene = build_scene(cfg, len(manifest), init_store)
        if self.stage == 2:
            for name in self.scene.store.names():
                self.scene.store.set_trainable(name, name.startswith(STAGE2_TRAINABLE))
        self.state = AdamState(lr=cfg.lr)
        self.iteration = 0
        self.history: list[dict] = []
        self.extractor = semantic.make_extractor(cfg.semantic_extractor, cfg.semantic_seed, cfg.semantic_dim)
        self._semantic_targets = None
        self._t0 = time.time()

    # ------------------------------------------------------------ state io
    def restore(self, path):
        params, (m, v), meta = load_training_checkpoint(path)
        if meta.get("stage") != self.stage:
            raise ValueError(f"{path}: checkpoint is from stage {meta.get('stage')}, not {self.stage}")
        for name in self.scene.store.names():
            self.scene.store.set_value(name, params[name].data)
        self.state = AdamState(lr=self.cfg.lr, step=int(meta["adam_step"]), m=m, v=v)
        self.iteration = int(meta["iteration"])

    def save(self, path) -> Path:
        meta = {"stage": self.stage, "iteration": self.iteration, "n_images": len(self.manifest),
                "config": self.cfg.to_dict()}
        save_training_checkpoint(path, self.scene, self.state, meta)
        return Path(path)

    # -------------------------------------------------------------- losses
    def _semantic_reference(self):
        if self._semantic_targets is None:
            feats = []
            for v in self.views:
                img = v.reference.reshape(v.camera.height, v.camera.width, 3)
                with no_grad():
                    feats.append(self.extractor.extract(img).data)
            self._semantic_targets = feats
        return self._semantic_targets

    def semantic_term(self, it: int, rng: np.random.Generator) -> Tensor:
        cfg = self.cfg
        targets = self._semantic_reference()
        positions = [v.camera.position for v in self.views]
        inp = self.manifest.input_index
        cam0 = self.views[inp].camera
        sampler = semantic.AugmentationSampler(
            j=cfg.semantic_views, radius=float(np.mean([np.linalg.norm(p) for p in positions])),
            resolution=cfg.semantic_resolution, focal=cam0.fx / cam0.width, seed=cfg.seed)
        cams = semantic.sample_viewpoints(sampler, cfg.seed, it, positions)
        res = cfg.semantic_resolution
        stage = "geometry" if self.stage == 1 else "texture"
        augmented = []
        for cam in cams:
            out = render_rays(self.scene, image_rays(cam), stage=stage, frame=None,
                              n_coarse=cfg.semantic_coarse, n_fine=cfg.semantic_fine, rng=rng)
            augmented.append((self.extractor.extract(out.color.reshape(res, res, 3)), cam.position))
        keys = [(Tensor(targets[i]), positions[i]) for i in range(len(self.views)) if i != inp]
        pairs = semantic.assemble_semantic_terms(Tensor(targets[inp]), keys, augmented)
        return losses.semantic_loss(pairs)

    def step(self) -> dict:
        cfg = self.cfg
        it = self.iteration
        rng = np.random.default_rng([cfg.seed, self.stage, it])
        vi = it % len(self.views)
        view = self.views[vi]
        pix = sample_pixels(view, cfg.rays, cfg.background_fraction, rng)
        cam = view.camera
        rays = generate_rays(cam, pix % cam.width + 0.5, pix // cam.width + 0.5)
        frame = vi if cfg.transient else None
        stage = "geometry" if self.stage == 1 else "texture"
        out = render_rays(self.scene, rays, stage=stage, frame=frame, n_coarse=cfg.n_coarse,
                          n_fine=cfg.n_fine, rng=rng)
        comp = {"rgb": losses.rgb_loss(out.color, view.reference[pix], view.weight)}
        w = cfg.weights
        if self.stage == 1:
            mask = None if view.mask is None else view.mask[pix]
            if view.normal is not None and w.normal > 0:
                valid = mask > 0.5 if mask is not None else None
                comp["norm"] = losses.normal_loss(out.normal, view.normal[pix], valid)
            if w.eikonal > 0:
                hit = out.opacity.data > 0.5
                surf = out.surface_points(rays)[hit]
                pts = losses.eikonal_points(rng, cfg.eikonal_points, surf)
                comp["eik"] = losses.eikonal_loss(self.scene.sdf, pts)
            if mask is not None and w.mask > 0:
                comp["mask"] = losses.mask_loss(out.opacity, mask)
            residual = out.residual
        else:
            residual = None
        if cfg.transient and w.transient > 0:
            comp["trans"] = losses.transient_reg(residual, out.transient_color, cfg.field.sdf_residual_bound)
        if cfg.semantic and w.semantic > 0 and it % cfg.semantic_every == 0:
            comp["sem"] = self.semantic_term(it, rng)
        try:
            report = losses.total_loss(comp, w, self.stage)
        except FloatingPointError as e:
            raise self._halt(str(e)) from None
        grads = backward(report.tensor, self.scene.store)
        bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise self._halt(f"non-finite gradient for {bad[:3]}")
        adam_step(self.scene.store, grads, self.state)
        self.iteration += 1
        row = {"iteration": it, **report.as_dict(), "inv_std": float(self.scene.inv_std.data),
               "wall_time": time.time() - self._t0}
        self.history.append(row)
        return row

    def _halt(self, cause: str) -> TrainingHalted:
        path = Path(self.cfg.checkpoint_out or f"stage{self.stage}.ckpt").with_suffix(".halted.ckpt")
        self.save(path)
        msg = f"training halted at iteration {self.iteration}: {cause}; last good state saved to {path}"
        log.error(msg)
        return TrainingHalted(msg)

    # ---------------------------------------------------------------- loop
    def run(self, out_dir=None, until: int | None = None, progress=None) -> TrainResult:
        cfg = self.cfg
        stop = cfg.iterations if until is None else min(until, cfg.iterations)
        out = Path(out_dir) if out_dir is not None else None
        ckpt = None
        writer = fh = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            ckpt = Path(cfg.checkpoint_out) if cfg.checkpoint_out else out / f"stage{self.stage}.ckpt"
            log_path = out / f"log_stage{self.stage}.csv"
            fresh = not log_path.exists() or self.iteration == 0
            fh = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
            if fresh:
                writer.writeheader()
        try:
            while self.iteration < stop:
                row = self.step()
                if writer is not None:
                    writer.writerow(row)
                if progress is not None:
                    progress(row)
                if ckpt is not None and self.iteration % cfg.checkpoint_every == 0:
                    self.save(ckpt)
        finally:
            if fh is not None:
                fh.close()
        if ckpt is not None:
            self.save(ckpt)
        return TrainResult(self.scene, self.history, ckpt, self.iteration, self.state)


def _stage_cfg(cfg: TrainConfig, stage: int) -> TrainConfig:
    return cfg if cfg.stage == stage else cfg.replace(stage=stage)


def train_stage1(cfg: TrainConfig, manifest, out_dir=None, resume=None, until=None, progress=None) -> TrainResult:
    manifest = _manifest(manifest)
    trainer = Trainer(_stage_cfg(cfg, 1), manifest)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run(out_dir, until, progress)


def train_stage2(cfg: TrainConfig, manifest, stage1_checkpoint, out_dir=None, resume=None, until=None,
                 progress=None) -> TrainResult:
    manifest = _manifest(manifest)
    if stage1_checkpoint is None or (not isinstance(stage1_checkpoint, ParameterStore)
                                     and not Path(stage1_checkpoint).exists()):
        raise FileNotFoundError(f"stage-1 checkpoint not found: {stage1_checkpoint}")
    if isinstance(stage1_checkpoint, ParameterStore):
        store = stage1_checkpoint
    else:
        store, _, meta = load_training_checkpoint(stage1_checkpoint)
        if meta.get("stage") != 1:
            raise ValueError(f"{stage1_checkpoint} is not a stage-1 checkpoint")
    trainer = Trainer(_stage_cfg(cfg, 2), manifest, init_store=store)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run(out_dir, until, progress)


def _manifest(m):
    if isinstance(m, dataio.SceneManifest):
        return m
    p = Path(m)
    return dataio.load_manifest(p / "manifest.json" if p.is_dir() else p)


# --------------------------------------------------------------- inference
def load_scene(path) -> tuple[NeuralScene, dict]:
    params, _, meta = load_training_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    scene = build_scene(cfg, int(meta["n_images"]), params)
    return scene, meta


def base_sdf_fn(scene: NeuralScene):
    def fn(p):
        with no_grad():
            return scene.sdf.base_sdf(np.asarray(p, dtype=np.float32)).data
    return fn


def extract_mesh(scene: NeuralScene, resolution: int = 128, workers: int = 1, colors: bool = False) -> TriangleMesh:
    """Marching cubes on the non-transient SDF; optional vertex colours from the base texture head."""
    mesh = marching_cubes(base_sdf_fn(scene), resolution, workers=workers)
    if colors and not mesh.is_empty:
        with no_grad():
            v = mesh.vertices.astype(np.float32)
            geo = scene.geometry(v, None, with_grad=True)
            n = geo.grad.data / np.maximum(np.linalg.norm(geo.grad.data, axis=-1, keepdims=True), 1e-9)
            # view the surface head-on, along the inward normal
            col = scene.color(v, -n, geo.grad, geo.feature, None, "texture")
        mesh.colors = np.clip(col.combined.data, 0.0, 1.0)
    return mesh


def render_views(scene: NeuralScene, cameras, stage: str, n_coarse: int, n_fine: int,
                 seed: int = 0, workers: int = 1) -> list[np.ndarray]:
    return [render_image(scene, cam, stage=stage, frame=None, n_coarse=n_coarse, n_fine=n_fine,
                         seed=seed + i, workers=workers)["color"] for i, cam in enumerate(cameras)]


def load_ground_truth(data_dir):
    """(analytic scene, imperfection config) from a synthetic dataset directory, or None."""
    p = Path(data_dir) / "synthetic.json"
    if not p.exists():
        return None
    doc = json.loads(p.read_text())
    scene = synthgen.make_scene(doc["scene"]["name"])
    scene.albedo = synthgen.Checker(**{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in doc["scene"]["albedo"].items()})
    cfg = synthgen.ImperfectionConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc["config"].items()})
    return scene, cfg


def evaluate(scene: NeuralScene, gt: synthgen.AnalyticScene | None, cfg: TrainConfig, stage: int,
             gen_cfg: synthgen.ImperfectionConfig | None = None, n_views: int | None = None,
             seed: int = 12345, mesh: TriangleMesh | None = None, workers: int = 1,
             geometry: bool = True) -> metrics.MetricsReport:
    """CD / IoU against the analytic shape and PSNR / SSIM over held-out novel views.

    Without ground truth every metric is None; ``geometry=False`` skips CD / IoU.
    Stage-1 models are compared on albedo, stage-2 models on shaded images.
    """
    if gt is None:
        return metrics.MetricsReport()
    mode = "texture" if stage == 2 else "geometry"

    def render(cams):
        return render_views(scene, cams, mode, cfg.eval_coarse, cfg.eval_fine, seed, workers)

    if geometry and mesh is None:
        mesh = extract_mesh(scene, cfg.mesh_resolution, workers)
    return score_reconstruction(gt, base_sdf_fn(scene) if geometry else None, mesh, render, stage,
                                gen_cfg, n_views or cfg.eval_views, cfg.eval_resolution, cfg.mesh_resolution, seed)


def score_reconstruction(gt: synthgen.AnalyticScene, sdf_fn, mesh: TriangleMesh | None, render, stage: int,
                         gen_cfg: synthgen.ImperfectionConfig | None = None, n_views: int = 60,
                         resolution: int = 64, grid: int = 128, seed: int = 12345) -> metrics.MetricsReport:
    """Metrics of any prediction given as an SDF callable, a mesh and ``render(cameras) -> images``.

    Missing pieces leave their metrics as None.
    """
    report = metrics.MetricsReport()
    gen_cfg = gen_cfg or synthgen.ImperfectionConfig()
    if mesh is not None and not mesh.is_empty:
        report.cd = metrics.chamfer_distance(mesh, marching_cubes(gt.sdf, grid), seed=seed)
    if sdf_fn is not None:
        report.iou = metrics.volume_iou(sdf_fn, gt.sdf, grid)
    if render is not None and n_views > 0:
        cams = synthgen.novel_cameras(n_views, seed, gen_cfg.radius, resolution, gen_cfg.elevation)
        key = "image" if stage == 2 else "albedo"
        ps, ss = [], []
        for cam, pred in zip(cams, render(cams)):
            ref = synthgen.render_view(gt, cam, None, gen_cfg.light, gen_cfg.ambient, gen_cfg.intensity)[key]
            pred = np.clip(pred, 0.0, 1.0)
            ps.append(metrics.psnr(pred, ref))
            ss.append(metrics.ssim(pred, ref))
        report.psnr = float(np.mean(ps))
        report.ssim = float(np.mean(ss))
    return report


def training_view_psnr(scene: NeuralScene, manifest: dataio.SceneManifest, cfg: TrainConfig, stage: int) -> float:
    """Mean PSNR of re-rendered training views against their images (stage 2) or albedo maps (stage 1)."""
    vals = []
    for i, v in enumerate(manifest.views):
        ref = v.image if stage == 2 or v.albedo is None else v.albedo
        pred = render_image(scene, v.camera, stage="texture" if stage == 2 else "geometry",
                            frame=i if cfg.transient else None, n_coarse=cfg.eval_coarse,
                            n_fine=cfg.eval_fine, seed=i)["color"]
        vals.append(metrics.psnr(np.clip(pred, 0, 1), ref))
    return float(np.mean(vals))

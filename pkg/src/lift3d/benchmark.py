"""Desk-scale synthetic benchmark and ablation runs."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import pipeline, synthgen
from .config import TrainConfig, desk_preset

log = logging.getLogger(__name__)

DESK_DATA = dict(n_views=16, resolution=64, light_jitter=30.0, warp=0.01, seed=7)


def ablation_config(name: str, base: TrainConfig | None = None) -> TrainConfig:
    """Stage-1 configuration for a named variant of the full pipeline."""
    cfg = base or desk_preset()
    if name == "full":
        return cfg
    if name == "raw_image":
        return cfg.replace(supervision="image")
    if name == "no_normal":
        return cfg.replace(weights=replace(cfg.weights, normal=0.0))
    if name == "no_transient":
        return cfg.replace(transient=False)
    raise ValueError(f"unknown ablation {name!r}")


ABLATIONS = ("raw_image", "no_normal", "no_transient")


@dataclass
class RunSummary:
    name: str
    stage: int
    cd: float | None
    iou: float | None
    psnr: float | None
    ssim: float | None
    train_seconds: float
    eval_seconds: float
    checkpoint: str
    source_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def source_digest() -> str:
    """Hash of the package sources; cached runs are only reused for identical code."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for f in sorted(root.rglob("*.py")):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


def load_cached(out_dir, cfg: TrainConfig) -> RunSummary | None:
    """Summary of a finished run in ``out_dir`` made with ``cfg`` and the current code, else None."""
    out = Path(out_dir)
    try:
        doc = json.loads((out / "summary.json").read_text())
        same_cfg = TrainConfig.load(out / "config.json") == cfg
    except (OSError, ValueError, KeyError):
        return None
    ckpt = out / Path(doc["checkpoint"]).name
    if not same_cfg or doc.get("source_digest") != source_digest() or not ckpt.exists():
        return None
    return RunSummary(**{**doc, "checkpoint": str(ckpt)})


def make_dataset(root, scene: str = "sphere", **overrides) -> Path:
    """Generate (or reuse) the synthetic dataset under ``root``."""
    root = Path(root)
    cfg = synthgen.ImperfectionConfig(**{**DESK_DATA, **overrides})
    meta = root / "synthetic.json"
    if meta.exists():
        doc = json.loads(meta.read_text())
        if doc["scene"]["name"] == scene and doc["config"] == json.loads(json.dumps(asdict(cfg))):
            return root
    synthgen.generate_dataset(scene, cfg, root)
    return root


def run_stage1(data_dir, out_dir, cfg: TrainConfig, name: str = "full", evaluate: bool = True) -> RunSummary:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    t0 = time.time()
    result = pipeline.train_stage1(cfg, data_dir, out)
    t_train = time.time() - t0
    report = _evaluate(result.scene, cfg, data_dir, 1, evaluate)
    summary = RunSummary(name, 1, report.cd, report.iou, report.psnr, report.ssim, t_train,
                         time.time() - t0 - t_train, str(result.checkpoint), source_digest())
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1))
    log.info("%s stage 1: %s", name, summary)
    return summary


def run_stage2(data_dir, out_dir, cfg: TrainConfig, stage1_checkpoint, name: str = "full",
               evaluate: bool = True) -> RunSummary:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg.replace(stage=2)
    cfg.save(out / "config.json")
    t0 = time.time()
    result = pipeline.train_stage2(cfg, data_dir, stage1_checkpoint, out)
    t_train = time.time() - t0
    report = _evaluate(result.scene, cfg, data_dir, 2, evaluate, geometry=False)
    summary = RunSummary(name, 2, report.cd, report.iou, report.psnr, report.ssim, t_train,
                         time.time() - t0 - t_train, str(result.checkpoint), source_digest())
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=1))
    log.info("%s stage 2: %s", name, summary)
    return summary


def run_suite(root, variants=("full",) + ABLATIONS, stage2: bool = True, base: TrainConfig | None = None,
              reuse: bool = True) -> dict[str, RunSummary]:
    """Stage-1 variants plus stage 2 with and without augmentation, reusing matching finished runs."""
    root = Path(root)
    base = base or desk_preset()
    data = make_dataset(root / "data")
    jobs = [(name, 1, ablation_config(name, base)) for name in variants]
    if stage2:
        if "full" not in variants:
            jobs.insert(0, ("full", 1, base))
        jobs += [("stage2_aug", 2, base.replace(stage=2)), ("stage2_noaug", 2, base.replace(stage=2, semantic=False))]
    results = {}
    for name, stage, cfg in jobs:
        out = root / name
        cached = load_cached(out, cfg) if reuse else None
        if cached is not None:
            log.info("reusing %s", out)
            results[name] = cached
        elif stage == 1:
            results[name] = run_stage1(data, out, cfg, name)
        else:
            results[name] = run_stage2(data, out, cfg, results["full"].checkpoint, name)
    return results


def _evaluate(scene, cfg, data_dir, stage, enabled, geometry=True):
    from .metrics import MetricsReport
    if not enabled:
        return MetricsReport()
    gt = pipeline.load_ground_truth(data_dir)
    if gt is None:
        return MetricsReport()
    return pipeline.evaluate(scene, gt[0], cfg, stage, gen_cfg=gt[1], geometry=geometry)

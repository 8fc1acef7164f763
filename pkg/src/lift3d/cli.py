"""Command-line entry point: gen-synthetic, reconstruct, extract-mesh, render, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, pipeline, synthgen
from .config import TrainConfig, desk_preset, large_preset
from .meshing import save_obj

log = logging.getLogger("lift3d")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lift3d", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON file with TrainConfig fields")
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1, help="threads for inference rendering / meshing")
        p.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("gen-synthetic", help="render an imperfect synthetic multi-view dataset")
    common(g)
    g.add_argument("--scene", choices=sorted(synthgen.SCENES), default="sphere")
    g.add_argument("--views", type=int, default=16)
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("--light-jitter", type=float, default=0.0)
    g.add_argument("--pose-jitter", type=float, default=0.0)
    g.add_argument("--warp", type=float, default=0.0)

    r = sub.add_parser("reconstruct", help="train stage 1 (geometry + albedo) or stage 2 (texture)")
    common(r)
    r.add_argument("--data", type=Path, required=True)
    r.add_argument("--stage", type=int, choices=(1, 2), default=1)
    r.add_argument("--preset", choices=("desk", "large"), default="desk")
    r.add_argument("--iterations", type=int)
    r.add_argument("--resume", type=Path, help="checkpoint of the same stage to continue from")

    m = sub.add_parser("extract-mesh", help="marching cubes on a trained checkpoint")
    common(m)
    m.add_argument("--checkpoint", type=Path, required=True)
    m.add_argument("--resolution", type=int, default=128)
    m.add_argument("--colors", action="store_true", help="add base-texture vertex colours")

    d = sub.add_parser("render", help="render images from a checkpoint")
    common(d)
    d.add_argument("--checkpoint", type=Path, required=True)
    d.add_argument("--data", type=Path, help="render the manifest cameras instead of novel views")
    d.add_argument("--stage", type=int, choices=(1, 2), default=2)
    d.add_argument("--views", type=int, default=8)
    d.add_argument("--resolution", type=int, default=64)

    e = sub.add_parser("evaluate", help="CD / IoU / PSNR / SSIM against synthetic ground truth")
    common(e)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--stage", type=int, choices=(1, 2))
    e.add_argument("--views", type=int, default=60)
    e.add_argument("--resolution", type=int, help="mesh / occupancy grid resolution")
    return ap


def _train_config(args) -> TrainConfig:
    base = desk_preset() if args.preset == "desk" else large_preset()
    cfg = TrainConfig.load(args.config, base) if args.config else base
    over = {"stage": args.stage}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.iterations is not None:
        over["iterations"] = args.iterations
    return cfg.replace(**over)


def cmd_gen_synthetic(args):
    cfg = synthgen.ImperfectionConfig(n_views=args.views, resolution=args.resolution,
                                      light_jitter=args.light_jitter, pose_jitter=args.pose_jitter,
                                      warp=args.warp, seed=0 if args.seed is None else args.seed)
    manifest = synthgen.generate_dataset(args.scene, cfg, args.out)
    print(f"wrote {len(manifest)} views to {args.out}")


def cmd_reconstruct(args):
    cfg = _train_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.save(args.out / "config.json")
    manifest = dataio.load_manifest(args.data / "manifest.json" if args.data.is_dir() else args.data)
    for w in manifest.warnings:
        log.warning(w)

    def progress(row):
        if row["iteration"] % 100 == 0:
            log.info("it %d total %.5f rgb %.5f", row["iteration"], row["total"], row["rgb"])

    if cfg.stage == 1:
        res = pipeline.train_stage1(cfg, manifest, args.out, resume=args.resume, progress=progress)
    else:
        ckpt = Path(cfg.checkpoint_in) if cfg.checkpoint_in else args.out / "stage1.ckpt"
        if not ckpt.exists():
            raise FileNotFoundError(f"stage-1 checkpoint not found: {ckpt}")
        res = pipeline.train_stage2(cfg, manifest, ckpt, args.out, resume=args.resume, progress=progress)
    print(f"stage {cfg.stage} finished at iteration {res.iteration}; checkpoint {res.checkpoint}")


def _echo(args, extra: dict):
    out_dir = args.out if args.out.suffix == "" else args.out.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items()}
    (out_dir / f"{args.command}.json").write_text(json.dumps({**doc, **extra}, indent=1, sort_keys=True))


def cmd_extract_mesh(args):
    scene, meta = pipeline.load_scene(args.checkpoint)
    mesh = pipeline.extract_mesh(scene, args.resolution, args.workers, colors=args.colors)
    if mesh.is_empty:
        raise ValueError(f"{args.checkpoint}: the SDF has no zero crossing inside the unit cube")
    path = args.out if args.out.suffix == ".obj" else args.out / "mesh.obj"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_obj(mesh, path)
    _echo(args, {"train_config": meta["config"]})
    print(f"wrote {len(mesh.vertices)} vertices, {len(mesh.faces)} faces to {path}")


def cmd_render(args):
    scene, meta = pipeline.load_scene(args.checkpoint)
    cfg = TrainConfig.from_dict(meta["config"])
    if args.data is not None:
        manifest = dataio.load_manifest(args.data / "manifest.json" if args.data.is_dir() else args.data)
        cams = [v.camera for v in manifest.views]
    else:
        cams = synthgen.novel_cameras(args.views, 0 if args.seed is None else args.seed,
                                      resolution=args.resolution)
    stage = "texture" if args.stage == 2 else "geometry"
    args.out.mkdir(parents=True, exist_ok=True)
    imgs = pipeline.render_views(scene, cams, stage, cfg.eval_coarse, cfg.eval_fine, workers=args.workers)
    for i, img in enumerate(imgs):
        dataio.save_png(args.out / f"render_{i:03d}.png", np.clip(img, 0.0, 1.0))
    _echo(args, {"train_config": meta["config"]})
    print(f"wrote {len(imgs)} renders to {args.out}")


def cmd_evaluate(args):
    scene, meta = pipeline.load_scene(args.checkpoint)
    cfg = TrainConfig.from_dict(meta["config"])
    if args.resolution is not None:
        cfg = cfg.replace(mesh_resolution=args.resolution)
    stage = args.stage or int(meta["stage"])
    gt = pipeline.load_ground_truth(args.data)
    if gt is None:
        log.warning("%s has no synthetic ground truth; all metrics are null", args.data)
        report = pipeline.evaluate(scene, None, cfg, stage)
    else:
        report = pipeline.evaluate(scene, gt[0], cfg, stage, gen_cfg=gt[1], n_views=args.views,
                                   workers=args.workers)
    path = args.out if args.out.suffix == ".json" else args.out / "metrics.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    _echo(args, {"train_config": meta["config"]})
    print(report.to_json())


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "reconstruct": cmd_reconstruct,
    "extract-mesh": cmd_extract_mesh,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, RuntimeError, dataio.DataError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"lift3d {args.command}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

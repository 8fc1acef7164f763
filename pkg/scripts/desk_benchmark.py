"""Sphere desk benchmark: stage-1 variants, then stage 2 with and without view augmentation.

    python3 scripts/desk_benchmark.py --out runs/desk
    python3 scripts/desk_benchmark.py --out runs/quick --variants full --no-stage2 --iterations 500
"""

import argparse
import json
import logging
from pathlib import Path

from lift3d import benchmark
from lift3d.config import desk_preset

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs/desk")
ap.add_argument("--variants", nargs="+", default=["full", *benchmark.ABLATIONS], choices=("full",) + benchmark.ABLATIONS)
ap.add_argument("--iterations", type=int, default=None)
ap.add_argument("--no-stage2", dest="stage2", action="store_false")
ap.add_argument("--fresh", action="store_true", help="retrain even when a matching finished run exists")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

base = desk_preset() if args.iterations is None else desk_preset(iterations=args.iterations)
results = benchmark.run_suite(args.out, args.variants, args.stage2, base, reuse=not args.fresh)
doc = {k: v.to_dict() for k, v in results.items()}
(Path(args.out) / "results.json").write_text(json.dumps(doc, indent=1))
print(json.dumps(doc, indent=1))

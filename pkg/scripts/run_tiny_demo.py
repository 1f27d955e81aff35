#!/usr/bin/env python3
"""End-to-end demo on the tiny fixture model.

Synthesizes a handful of input images, runs the greedy token-discarding
attribution over each, renders overlays, compares against the occlusion
baseline for one image, and aggregates cohort statistics, all through
the CLI entry points. Outputs land in ./demo_out (or argv[1]).

Run `python scripts/gen_fixtures.py` first if tests/fixtures is missing.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from token_insight.cli import main as cli
from token_insight.imageio import InputImage, save_png

FIXTURES = REPO / "tests" / "fixtures"
WEIGHTS = FIXTURES / "tiny_weights.tnsa"


def synthesize_images(out_dir: Path, count: int = 6) -> None:
    y, x = np.mgrid[0:32, 0:32]
    for i in range(count):
        r = (x * (11 + 7 * i) + y * 13 + 29 * i) % 256
        g = (x * 5 + y * (31 + 3 * i) + 17) % 256
        b = ((x + y) * (19 + 2 * i) + 83) % 256
        px = np.stack([r, g, b], axis=-1).astype(np.float32) / 255.0
        save_png(InputImage.from_array(px), out_dir / f"sample{i}.png")


def main() -> int:
    if not WEIGHTS.exists():
        print("fixtures missing; run scripts/gen_fixtures.py first", file=sys.stderr)
        return 1
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out")
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    synthesize_images(img_dir)

    model_args = ["--config", "tiny", "--weights", str(WEIGHTS)]

    print("== batch attribution ==")
    rc = cli(["batch", "--dir", str(img_dir), *model_args,
              "--out-dir", str(out / "traces"), "--jobs", "4"])
    if rc != 0:
        return rc

    print("== cohort statistics ==")
    rc = cli(["stats", "--traces", str(out / "traces"), "--out", str(out / "stats")])
    if rc != 0:
        return rc
    stats = json.loads((out / "stats" / "stats.json").read_text())
    td = stats["tokens_discarded"]
    print(f"tokens discarded: mean {td['mean']:.2f}  median {td['median']:.1f}  "
          f"range [{td['min']:.0f}, {td['max']:.0f}]")
    print(f"largest single-token drop (cohort mean): "
          f"{stats['max_single_drop']['mean']:.4f}")

    print("== single-image explain with overlay ==")
    first = sorted(img_dir.glob("*.png"))[0]
    rc = cli(["explain", "--image", str(first), *model_args,
              "--out", str(out / "explain.trace.json"),
              "--overlay", str(out / "explain_overlay.png")])
    if rc != 0:
        return rc
    trace = json.loads((out / "explain.trace.json").read_text())
    print(f"{first.name}: class {trace['target_class']} "
          f"conf {trace['initial_confidence']:.3f} -> {trace['status']} "
          f"after {len(trace['steps'])} removals")

    print("== occlusion baseline on the same image ==")
    rc = cli(["occlude", "--image", str(first), *model_args, "--fill", "mean",
              "--out", str(out / "occlusion.map.json"),
              "--overlay", str(out / "occlusion_overlay.png")])
    if rc != 0:
        return rc
    occ = json.loads((out / "occlusion.map.json").read_text())
    top = max(occ["entries"], key=lambda e: e["drop"])
    removed = [s["token"] for s in trace["steps"]]
    print(f"occlusion's top token {top['token']} (drop {top['drop']:.4f}); "
          f"greedy discarding removed {removed}")
    print(f"outputs in {out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

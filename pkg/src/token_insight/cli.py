"""Command-line interface.

Subcommands:
    explain  — attribute one image: greedy token discarding to a flip
    batch    — run explain over a directory of images
    stats    — aggregate a directory of trace files into CSV/JSON
    occlude  — masking baseline over one image
    inspect  — print the name/shape/offset table of a weight archive

Exit codes: 0 success, 1 operational error (I/O, bad inputs), 2 when the
full input does not predict the requested target class.

Every command is deterministic: rerunning with the same inputs produces
byte-identical outputs regardless of --workers / --jobs.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import analysis, attribution
from .imageio import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    ImageFormatError,
    InputImage,
    load_image,
    resize_bilinear,
    save_png,
    save_ppm,
)
from .attribution import (
    AttributionTrace,
    InitialMispredictionError,
    importance_to_json,
    run_occlusion,
    run_token_insight,
    trace_from_json,
    trace_to_importance,
    trace_to_json,
)
from .vit import PRESETS, ViTConfig, ViTSubsetClassifier, ViTWeights, predict
from .weights_io import ArchiveError, SchemaError, load_vit_weights, read_archive

IMAGE_SUFFIXES = {".png", ".ppm"}


@dataclass(frozen=True)
class RunManifest:
    """Resolved settings for a run; written next to batch outputs."""

    weights: str
    config_name: Optional[str]
    image_size: int
    patch_size: int
    dim: int
    depth: int
    heads: int
    num_classes: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    target: str
    max_iters: Optional[int]
    workers: int
    # image-level job count is deliberately absent: outputs are
    # byte-identical for any --jobs value
    out_dir: str


def _parse_triple(text: str, flag: str) -> tuple[float, float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ValueError(f"{flag} needs exactly 3 comma-separated floats, got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _resolve_config(args) -> ViTConfig:
    base = PRESETS[args.config]
    return ViTConfig(
        image_size=args.image_size or base.image_size,
        patch_size=args.patch_size or base.patch_size,
        dim=args.dim or base.dim,
        depth=args.depth or base.depth,
        heads=args.heads or base.heads,
        num_classes=args.num_classes or base.num_classes,
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", required=True, help="TNSA weight archive")
    p.add_argument("--config", choices=sorted(PRESETS), default="vitb16",
                   help="geometry preset (default: vitb16)")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--mean", default=None, help="normalization means, e.g. 0.485,0.456,0.406")
    p.add_argument("--std", default=None, help="normalization stds, e.g. 0.229,0.224,0.225")


def _norm_constants(args) -> tuple[tuple[float, ...], tuple[float, ...]]:
    mean = _parse_triple(args.mean, "--mean") if args.mean else IMAGENET_MEAN
    std = _parse_triple(args.std, "--std") if args.std else IMAGENET_STD
    return mean, std


def _parse_target(text: str) -> int | str:
    if text == "auto":
        return "auto"
    return int(text)


def _write_or_print(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _save_image(img: InputImage, path: str) -> None:
    if path.lower().endswith(".ppm"):
        save_ppm(img, path)
    else:
        save_png(img, path)


def _attribute_image(image_path, weights: ViTWeights, mean, std, target,
                     max_iters, workers, wave_size) -> tuple[AttributionTrace, InputImage]:
    img = load_image(image_path)
    model = ViTSubsetClassifier.from_image(img, weights, mean, std)
    trace = run_token_insight(model, target, max_iters, workers=workers, wave_size=wave_size)
    size = weights.config.image_size
    return trace, resize_bilinear(img, size, size)


def cmd_explain(args) -> int:
    config = _resolve_config(args)
    weights = load_vit_weights(args.weights, config)
    mean, std = _norm_constants(args)
    trace, resized = _attribute_image(
        args.image, weights, mean, std, _parse_target(args.target),
        args.max_iters, args.workers, args.wave_size,
    )
    _write_or_print(trace_to_json(trace), args.out)
    if args.overlay:
        imap = trace_to_importance(trace, config.grid_size)
        _save_image(analysis.render_overlay(resized, imap), args.overlay)
    return 0


def cmd_batch(args) -> int:
    config = _resolve_config(args)
    weights = load_vit_weights(args.weights, config)
    mean, std = _norm_constants(args)
    target = _parse_target(args.target)

    image_dir = Path(args.dir)
    if not image_dir.is_dir():
        raise OSError(f"{image_dir}: not a directory")
    images = sorted(
        p for p in image_dir.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise OSError(f"{image_dir}: no .png or .ppm images found")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(path: Path) -> dict:
        try:
            trace, _ = _attribute_image(
                path, weights, mean, std, target,
                args.max_iters, args.workers, args.wave_size,
            )
        except Exception as exc:  # failures are logged and skipped
            return {"image": path.name, "status": "skipped", "error": str(exc)}
        (out_dir / f"{path.stem}.trace.json").write_text(trace_to_json(trace))
        return {"image": path.name, "status": "ok", "trace": f"{path.stem}.trace.json"}

    if args.jobs <= 1:
        entries = [one(p) for p in images]
    else:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(one, images))

    manifest = RunManifest(
        weights=str(args.weights),
        config_name=args.config,
        image_size=config.image_size,
        patch_size=config.patch_size,
        dim=config.dim,
        depth=config.depth,
        heads=config.heads,
        num_classes=config.num_classes,
        mean=tuple(mean),
        std=tuple(std),
        target=str(args.target),
        max_iters=args.max_iters,
        workers=args.workers,
        out_dir=str(out_dir),
    )
    doc = {"manifest": asdict(manifest), "images": entries}
    (out_dir / "batch_manifest.json").write_text(json.dumps(doc, indent=2) + "\n")
    for e in entries:
        if e["status"] == "skipped":
            print(f"skipped {e['image']}: {e['error']}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    trace_dir = Path(args.traces)
    if not trace_dir.is_dir():
        raise OSError(f"{trace_dir}: not a directory")
    traces = {}
    for path in sorted(trace_dir.glob("*.json")):
        if path.name == "batch_manifest.json":
            continue
        try:
            traces[path.stem] = trace_from_json(path.read_text())
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}: not a parseable trace ({exc})")
    if not traces:
        raise OSError(f"{trace_dir}: no trace files found")

    stats = analysis.aggregate(traces)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    analysis.export_stats_csv(stats, out_dir / "stats.csv")
    analysis.export_traces_csv(traces, out_dir / "traces.csv")
    (out_dir / "stats.json").write_text(analysis.cohort_stats_to_json(stats))
    return 0


def cmd_occlude(args) -> int:
    config = _resolve_config(args)
    weights = load_vit_weights(args.weights, config)
    mean, std = _norm_constants(args)
    img = load_image(args.image)
    resized = resize_bilinear(img, config.image_size, config.image_size)

    def predict_fn(im: InputImage):
        return predict(im, weights, mean, std)

    target = _parse_target(args.target)
    imap = run_occlusion(
        predict_fn, resized, config.patch_size, args.fill,
        fill_mean=mean, target_class=None if target == "auto" else target,
    )
    _write_or_print(importance_to_json(imap), args.out)
    if args.overlay:
        _save_image(analysis.render_overlay(resized, imap), args.overlay)
    return 0


def cmd_inspect(args) -> int:
    tensors = read_archive(args.weights)
    rows = [("name", "shape", "offset", "nbytes")]
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name]
        rows.append((name, "x".join(map(str, arr.shape)), str(offset), str(arr.nbytes)))
        offset += arr.nbytes
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(r[i].ljust(widths[i]) for i in range(4)).rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="token-insight",
        description="Greedy token-discarding attribution for ViT classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="attribute a single image")
    p.add_argument("--image", required=True)
    _add_model_flags(p)
    p.add_argument("--target", default="auto", help="'auto' or a class index")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--overlay", default=None, help="write an overlay image here")
    p.add_argument("--out", default=None, help="trace JSON path ('-' = stdout)")
    p.add_argument("--workers", type=int, default=1, help="candidate evaluation workers")
    p.add_argument("--wave-size", type=int, default=None,
                   help="candidates per scheduling wave (default: all at once)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("batch", help="attribute every image in a directory")
    p.add_argument("--dir", required=True)
    _add_model_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1, help="image-level parallelism")
    p.add_argument("--target", default="auto")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--wave-size", type=int, default=None)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("stats", help="aggregate trace files")
    p.add_argument("--traces", required=True, help="directory of trace JSON files")
    p.add_argument("--out", required=True, help="output directory for CSV/JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("occlude", help="occlusion baseline for a single image")
    p.add_argument("--image", required=True)
    _add_model_flags(p)
    p.add_argument("--fill", choices=["black", "mean"], required=True)
    p.add_argument("--target", default="auto")
    p.add_argument("--out", default=None, help="importance-map JSON path ('-' = stdout)")
    p.add_argument("--overlay", default=None)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("inspect", help="list archive contents")
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InitialMispredictionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArchiveError, SchemaError, ImageFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

"""Cohort aggregation over attribution traces and overlay rendering.

Aggregates summarize, per trace, how many tokens had to be discarded and
the largest single-token confidence drop, plus a per-iteration mean
confidence curve. The curve averages only traces still active at each
iteration (a trace is active at iteration i if it performed at least i
removals); iteration 0 is the mean initial confidence. The flip marker
is the mean number of tokens discarded across flipped traces.

Quantiles use linear interpolation at position q * (n - 1) over the
sorted values (vals[lo] * (1 - frac) + vals[hi] * frac), so the median
of an even count is the average of the two middle values. Means are
exact sums (math.fsum) divided by the count; both choices make every
aggregate independent of input order, bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

from .attribution import STATUS_FLIPPED, AttributionTrace, ImportanceMap
from .imageio import InputImage

__all__ = [
    "TraceRecord",
    "MetricSummary",
    "CohortStats",
    "aggregate",
    "export_csv",
    "export_traces_csv",
    "export_stats_csv",
    "cohort_stats_to_json",
    "render_overlay",
    "OVERLAY_FILL_RGB",
    "OVERLAY_BORDER_RGB",
    "overlay_alpha",
]


@dataclass(frozen=True)
class TraceRecord:
    image_id: str
    tokens_discarded: int
    max_single_drop: float
    flipped: bool
    initial_confidence: float


@dataclass(frozen=True)
class MetricSummary:
    count: int
    mean: float
    median: float
    q1: float
    q3: float
    min: float
    max: float


@dataclass(frozen=True)
class CohortStats:
    records: tuple[TraceRecord, ...]
    tokens_discarded: MetricSummary
    max_single_drop: MetricSummary
    mean_confidence_curve: tuple[float, ...]
    curve_active_counts: tuple[int, ...]
    mean_tokens_to_flip: Optional[float]


def _quantile(sorted_vals: list[float], q: float) -> float:
    if len(sorted_vals) == 1:
        return sorted_vals[0]
    pos = q * (len(sorted_vals) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    frac = pos - lo
    return sorted_vals[lo] * (1.0 - frac) + sorted_vals[hi] * frac


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _summary(values: list[float]) -> MetricSummary:
    ordered = sorted(float(v) for v in values)
    return MetricSummary(
        count=len(ordered),
        mean=_mean(ordered),
        median=_quantile(ordered, 0.5),
        q1=_quantile(ordered, 0.25),
        q3=_quantile(ordered, 0.75),
        min=ordered[0],
        max=ordered[-1],
    )


def aggregate(traces: Mapping[str, AttributionTrace]) -> CohortStats:
    """Fold a cohort of traces into distribution summaries.

    The result is a pure function of the trace *set*: records are sorted
    by image id, so input order never matters.
    """
    if not traces:
        raise ValueError("aggregate needs at least one trace")
    ids = sorted(traces)
    records = tuple(
        TraceRecord(
            image_id=image_id,
            tokens_discarded=len(traces[image_id].steps),
            max_single_drop=max((s.drop for s in traces[image_id].steps), default=0.0),
            flipped=traces[image_id].status == STATUS_FLIPPED,
            initial_confidence=traces[image_id].initial_confidence,
        )
        for image_id in ids
    )

    max_steps = max(r.tokens_discarded for r in records)
    curve: list[float] = []
    active: list[int] = []
    for i in range(max_steps + 1):
        if i == 0:
            vals = [traces[image_id].initial_confidence for image_id in ids]
        else:
            vals = [
                traces[image_id].steps[i - 1].confidence_after
                for image_id in ids
                if len(traces[image_id].steps) >= i
            ]
        curve.append(_mean(vals))
        active.append(len(vals))

    flipped_counts = [float(r.tokens_discarded) for r in records if r.flipped]
    return CohortStats(
        records=records,
        tokens_discarded=_summary([float(r.tokens_discarded) for r in records]),
        max_single_drop=_summary([r.max_single_drop for r in records]),
        mean_confidence_curve=tuple(curve),
        curve_active_counts=tuple(active),
        mean_tokens_to_flip=_mean(flipped_counts) if flipped_counts else None,
    )


def _num(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


def export_traces_csv(traces: Mapping[str, AttributionTrace], path) -> None:
    """Per-step table: one row per (image, iteration)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "iteration", "token", "confidence", "drop"])
        for image_id in sorted(traces):
            for s in traces[image_id].steps:
                writer.writerow(
                    [image_id, s.iteration, s.removed_token,
                     _num(s.confidence_after), _num(s.drop)]
                )


def export_stats_csv(stats: CohortStats, path) -> None:
    """Per-trace table followed by a summary block, each with a header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "tokens_discarded", "max_single_drop", "flipped",
             "initial_confidence"]
        )
        for r in stats.records:
            writer.writerow(
                [r.image_id, r.tokens_discarded, _num(r.max_single_drop),
                 _num(r.flipped), _num(r.initial_confidence)]
            )
        writer.writerow(["metric", "count", "mean", "median", "q1", "q3", "min", "max"])
        for name, m in (("tokens_discarded", stats.tokens_discarded),
                        ("max_single_drop", stats.max_single_drop)):
            writer.writerow(
                [name, m.count, _num(m.mean), _num(m.median), _num(m.q1),
                 _num(m.q3), _num(m.min), _num(m.max)]
            )
        flipped_count = sum(1 for r in stats.records if r.flipped)
        writer.writerow(["flipped_count", flipped_count, "", "", "", "", "", ""])
        marker = "" if stats.mean_tokens_to_flip is None else _num(stats.mean_tokens_to_flip)
        writer.writerow(["mean_tokens_to_flip", flipped_count, marker, "", "", "", "", ""])


def export_csv(obj, path) -> None:
    """Dispatch: a CohortStats writes the stats table, a mapping of traces
    writes the per-step table."""
    if isinstance(obj, CohortStats):
        export_stats_csv(obj, path)
    else:
        export_traces_csv(obj, path)


def cohort_stats_to_json(stats: CohortStats) -> str:
    obj = {
        "records": [asdict(r) for r in stats.records],
        "tokens_discarded": asdict(stats.tokens_discarded),
        "max_single_drop": asdict(stats.max_single_drop),
        "mean_confidence_curve": list(stats.mean_confidence_curve),
        "curve_active_counts": list(stats.curve_active_counts),
        "mean_tokens_to_flip": stats.mean_tokens_to_flip,
    }
    return json.dumps(obj, indent=2) + "\n"


# --- overlay rendering -------------------------------------------------------

OVERLAY_FILL_RGB = (1.0, 0.0, 0.0)
OVERLAY_BORDER_RGB = (0.55, 0.0, 0.0)
_ALPHA_TOP = 0.7
_ALPHA_BOTTOM = 0.2


def overlay_alpha(rank: int, ranked_count: int) -> float:
    """Tint opacity for a rank: 0.7 for rank 1, falling linearly to 0.2
    at the last rank."""
    if ranked_count <= 1:
        return _ALPHA_TOP
    span = _ALPHA_TOP - _ALPHA_BOTTOM
    return _ALPHA_TOP - (rank - 1) * (span / (ranked_count - 1))


def render_overlay(img: InputImage, imap: ImportanceMap) -> InputImage:
    """Tint ranked patches red over the image, strongest rank first.

    Each ranked patch is blended uniformly at its rank's alpha; its 1px
    outline uses a darker red at the same alpha so patch boundaries stay
    visible. Pixels outside ranked patches are untouched.
    """
    side = imap.side
    if img.width != img.height or img.width % side != 0:
        raise ValueError(
            f"overlay geometry mismatch: image {img.width}x{img.height} "
            f"vs {side}x{side} token grid"
        )
    p = img.width // side
    ranked = imap.ranked_tokens()
    out = img.pixels.copy()
    fill = np.asarray(OVERLAY_FILL_RGB, dtype=np.float32)
    border = np.asarray(OVERLAY_BORDER_RGB, dtype=np.float32)
    for rank, token in enumerate(ranked, start=1):
        a = np.float32(overlay_alpha(rank, len(ranked)))
        gy, gx = divmod(token, side)
        y0, x0 = gy * p, gx * p
        block = img.pixels[y0:y0 + p, x0:x0 + p]
        tinted = (1 - a) * block + a * fill
        ring = (1 - a) * block + a * border
        tinted[0, :] = ring[0, :]
        tinted[-1, :] = ring[-1, :]
        tinted[:, 0] = ring[:, 0]
        tinted[:, -1] = ring[:, -1]
        out[y0:y0 + p, x0:x0 + p] = tinted
    return InputImage.from_array(out)

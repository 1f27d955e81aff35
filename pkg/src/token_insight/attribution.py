"""Greedy token-discarding attribution and the occlusion baseline.

The search works against an abstract subset classifier, so the same code
drives both the real transformer and closed-form stub models in tests.
Each iteration evaluates, for every retained token, the confidence the
target class would have if that token were removed, permanently discards
the token whose removal drops the confidence the most, and repeats until
the predicted class changes.

Cost model: the search visits states j = 0..k (j tokens removed so far,
k the final step count) and evaluates one candidate wave of size N - j
per state, the terminal state included; the stopping rule for a state is
applied once its wave has been issued. A k-step trace therefore performs
exactly sum_{j=0..k} (N - j) candidate evaluations, quadratic in the
token count. The one full-input classification that anchors the trace is
not part of the search cost. Stops caused by the max_iters guard skip
the terminal wave.

All candidate evaluations within a wave are independent pure calls and
may run on any number of workers; results are assembled in token order,
so traces are bit-identical regardless of scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .imageio import IMAGENET_MEAN, InputImage
from .vit import Prediction, TokenSubset

__all__ = [
    "SubsetClassifier",
    "InitialMispredictionError",
    "AttributionStep",
    "AttributionTrace",
    "ImportanceMap",
    "STATUS_FLIPPED",
    "STATUS_EXHAUSTED",
    "STATUS_MAX_ITERS",
    "evaluate_candidates",
    "greedy_step",
    "run_token_insight",
    "trace_to_importance",
    "run_occlusion",
    "trace_to_json",
    "trace_from_json",
    "importance_to_json",
    "importance_from_json",
]

STATUS_FLIPPED = "flipped"
STATUS_EXHAUSTED = "exhausted"
STATUS_MAX_ITERS = "max_iters_reached"

TRACE_SCHEMA_VERSION = 1


class SubsetClassifier(Protocol):
    """A pure, deterministic classifier over retained-token subsets."""

    token_count: int

    def evaluate(self, subset: TokenSubset) -> Prediction: ...


class InitialMispredictionError(ValueError):
    """The full input does not predict the requested target class."""


@dataclass(frozen=True)
class AttributionStep:
    iteration: int  # 1-based
    removed_token: int
    confidence_after: float  # target-class confidence once the token is gone
    drop: float  # previous confidence minus confidence_after


@dataclass(frozen=True)
class AttributionTrace:
    target_class: int
    initial_confidence: float
    steps: tuple[AttributionStep, ...]
    status: str
    # Search cost actually paid; not part of the serialized schema.
    candidate_evaluations: int = -1


@dataclass(frozen=True)
class ImportanceMap:
    """Per-token removal ranks and confidence drops on the patch grid.

    Ranks are 1-based and contiguous over exactly the ranked tokens;
    unranked tokens carry rank None and drop 0.
    """

    side: int
    ranks: tuple[Optional[int], ...]
    drops: tuple[float, ...]

    def __post_init__(self):
        n = self.side * self.side
        if len(self.ranks) != n or len(self.drops) != n:
            raise ValueError(f"importance map needs {n} entries for side {self.side}")
        present = sorted(r for r in self.ranks if r is not None)
        if present != list(range(1, len(present) + 1)):
            raise ValueError("ranks must form a contiguous 1..k sequence")

    def ranked_tokens(self) -> list[int]:
        """Token indices ordered by rank (rank 1 first)."""
        order = [(r, t) for t, r in enumerate(self.ranks) if r is not None]
        return [t for _r, t in sorted(order)]


def _round6(x: float) -> float:
    # +0.0 folds -0.0 into 0.0 so serialized traces are canonical
    return round(float(x), 6) + 0.0


def _wave(
    model: SubsetClassifier,
    subset: TokenSubset,
    workers: int = 1,
    wave_size: Optional[int] = None,
) -> list[tuple[int, Prediction]]:
    """Evaluate every single-token removal from `subset`, in token order."""
    tokens = subset.retained
    if not tokens:
        return []

    def eval_one(token: int) -> tuple[int, Prediction]:
        return token, model.evaluate(subset.remove(token))

    chunk = len(tokens) if not wave_size else max(1, wave_size)
    results: list[tuple[int, Prediction]] = []
    for start in range(0, len(tokens), chunk):
        group = tokens[start:start + chunk]
        if workers <= 1 or len(group) == 1:
            results.extend(eval_one(t) for t in group)
        else:
            with ThreadPoolExecutor(max_workers=min(workers, len(group))) as pool:
                results.extend(pool.map(eval_one, group))
    return results


def evaluate_candidates(
    model: SubsetClassifier,
    current: TokenSubset,
    target_class: int,
    *,
    workers: int = 1,
    wave_size: Optional[int] = None,
) -> list[tuple[int, float]]:
    """Confidence the target class keeps after removing each retained token.

    One entry per retained token, ascending token order regardless of how
    the evaluations were scheduled.
    """
    if len(current) == 0:
        raise ValueError("evaluate_candidates needs at least one retained token")
    wave = _wave(model, current, workers=workers, wave_size=wave_size)
    return [(t, float(p.probs[target_class])) for t, p in wave]


def greedy_step(candidates: Sequence[tuple[int, float]]) -> int:
    """Token whose removal leaves the lowest confidence; ties go to the
    smallest token index."""
    if not candidates:
        raise ValueError("greedy_step needs at least one candidate")
    return min(candidates, key=lambda tc: (tc[1], tc[0]))[0]


def run_token_insight(
    model: SubsetClassifier,
    target_class: int | str = "auto",
    max_iters: Optional[int] = None,
    *,
    workers: int = 1,
    wave_size: Optional[int] = None,
) -> AttributionTrace:
    """Greedily discard tokens until the model's predicted class changes.

    `target_class="auto"` tracks the full-input prediction; an explicit
    class that the full input does not predict raises
    InitialMispredictionError, because the trace would be meaningless.
    `max_iters` defaults to the token count. The class token is never a
    removal candidate.
    """
    n = model.token_count
    if max_iters is None:
        max_iters = n
    subset = TokenSubset.full(n)
    initial = model.evaluate(subset)
    if target_class == "auto":
        c = initial.top_class
    else:
        c = int(target_class)
        if initial.top_class != c:
            raise InitialMispredictionError(
                f"full input predicts class {initial.top_class}, not the requested {c}"
            )

    steps: list[AttributionStep] = []
    current = initial
    evaluations = 0
    status = None
    while True:
        current_conf = float(current.probs[c])
        # Resource guard; checked before the wave is paid for. A flip that
        # happened at exactly max_iters still reports as flipped below.
        if (
            len(steps) >= max_iters
            and current.top_class == c
            and subset.retained
        ):
            status = STATUS_MAX_ITERS
            break
        cands = _wave(model, subset, workers=workers, wave_size=wave_size)
        evaluations += len(cands)
        if current.top_class != c:
            status = STATUS_FLIPPED
            break
        if not cands:
            status = STATUS_EXHAUSTED
            break
        by_token = dict(cands)
        token = greedy_step([(t, float(p.probs[c])) for t, p in cands])
        after = by_token[token]
        after_conf = float(after.probs[c])
        steps.append(
            AttributionStep(
                iteration=len(steps) + 1,
                removed_token=token,
                confidence_after=after_conf,
                drop=current_conf - after_conf,
            )
        )
        subset = subset.remove(token)
        current = after

    return AttributionTrace(
        target_class=c,
        initial_confidence=float(initial.probs[c]),
        steps=tuple(steps),
        status=status,
        candidate_evaluations=evaluations,
    )


def trace_to_importance(trace: AttributionTrace, side: int) -> ImportanceMap:
    """Arrange a trace's removal order and drops on the patch grid."""
    n = side * side
    ranks: list[Optional[int]] = [None] * n
    drops = [0.0] * n
    for step in trace.steps:
        if not 0 <= step.removed_token < n:
            raise ValueError(f"trace token {step.removed_token} outside a {side}x{side} grid")
        ranks[step.removed_token] = step.iteration
        drops[step.removed_token] = step.drop
    return ImportanceMap(side=side, ranks=tuple(ranks), drops=tuple(drops))


def run_occlusion(
    predict_fn: Callable[[InputImage], Prediction],
    image: InputImage,
    patch_size: int,
    fill: str = "black",
    *,
    fill_mean: Sequence[float] = IMAGENET_MEAN,
    target_class: Optional[int] = None,
) -> ImportanceMap:
    """Masking baseline: overwrite one patch at a time and re-classify.

    The token count never changes, so whatever signal the fill pixels
    carry stays in the input; contrast this with token discarding, where
    removed tokens are absent from the computation entirely. `fill` is
    "black" (zeros) or "mean" (the dataset means used for normalization).
    Every token is ranked, by descending confidence drop, ties broken by
    token index.
    """
    if image.width != image.height or image.width % patch_size != 0:
        raise ValueError(
            f"occlusion needs a square image divisible by the patch size, "
            f"got {image.width}x{image.height} with patch {patch_size}"
        )
    if fill == "black":
        fill_px = np.zeros(3, dtype=np.float32)
    elif fill == "mean":
        fill_px = np.asarray(fill_mean, dtype=np.float32)
    else:
        raise ValueError(f"fill must be 'black' or 'mean', got {fill!r}")

    side = image.width // patch_size
    full = predict_fn(image)
    c = full.top_class if target_class is None else int(target_class)
    base_conf = float(full.probs[c])

    drops = []
    for idx in range(side * side):
        gy, gx = divmod(idx, side)
        pixels = image.pixels.copy()
        y0, x0 = gy * patch_size, gx * patch_size
        pixels[y0:y0 + patch_size, x0:x0 + patch_size, :] = fill_px
        occluded = predict_fn(InputImage.from_array(pixels))
        drops.append(base_conf - float(occluded.probs[c]))

    order = sorted(range(len(drops)), key=lambda i: (-drops[i], i))
    ranks: list[Optional[int]] = [None] * len(drops)
    for rank, token in enumerate(order, start=1):
        ranks[token] = rank
    return ImportanceMap(side=side, ranks=tuple(ranks), drops=tuple(drops))


# --- serialization -----------------------------------------------------------

def trace_to_json(trace: AttributionTrace) -> str:
    """Canonical trace JSON; floats carry six decimals, ends with newline."""
    obj = {
        "schema": TRACE_SCHEMA_VERSION,
        "target_class": trace.target_class,
        "initial_confidence": _round6(trace.initial_confidence),
        "status": trace.status,
        "steps": [
            {
                "i": s.iteration,
                "token": s.removed_token,
                "confidence": _round6(s.confidence_after),
                "drop": _round6(s.drop),
            }
            for s in trace.steps
        ],
    }
    return json.dumps(obj, indent=2) + "\n"


def trace_from_json(text: str) -> AttributionTrace:
    obj = json.loads(text)
    if obj.get("schema") != TRACE_SCHEMA_VERSION:
        raise ValueError(f"unsupported trace schema {obj.get('schema')!r}")
    steps = tuple(
        AttributionStep(
            iteration=int(s["i"]),
            removed_token=int(s["token"]),
            confidence_after=float(s["confidence"]),
            drop=float(s["drop"]),
        )
        for s in obj["steps"]
    )
    return AttributionTrace(
        target_class=int(obj["target_class"]),
        initial_confidence=float(obj["initial_confidence"]),
        steps=steps,
        status=str(obj["status"]),
    )


def importance_to_json(imap: ImportanceMap) -> str:
    obj = {
        "schema": TRACE_SCHEMA_VERSION,
        "kind": "importance_map",
        "side": imap.side,
        "entries": [
            {"token": t, "rank": imap.ranks[t], "drop": _round6(imap.drops[t])}
            for t in range(imap.side * imap.side)
        ],
    }
    return json.dumps(obj, indent=2) + "\n"


def importance_from_json(text: str) -> ImportanceMap:
    obj = json.loads(text)
    if obj.get("kind") != "importance_map":
        raise ValueError("not an importance-map document")
    side = int(obj["side"])
    ranks: list[Optional[int]] = [None] * (side * side)
    drops = [0.0] * (side * side)
    for e in obj["entries"]:
        t = int(e["token"])
        ranks[t] = None if e["rank"] is None else int(e["rank"])
        drops[t] = float(e["drop"])
    return ImportanceMap(side=side, ranks=tuple(ranks), drops=tuple(drops))

"""Greedy token-discarding attribution for vision-transformer classifiers.

Ships a self-contained float32 ViT inference engine that can evaluate
any retained-token subset, the greedy search that finds the minimal
token sequence whose removal flips a prediction, an occlusion baseline
for contrast, cohort statistics, and overlay rendering.
"""

from .attribution import (
    AttributionStep,
    AttributionTrace,
    ImportanceMap,
    InitialMispredictionError,
    SubsetClassifier,
    evaluate_candidates,
    greedy_step,
    run_occlusion,
    run_token_insight,
    trace_from_json,
    trace_to_importance,
    trace_to_json,
)
from .analysis import CohortStats, aggregate, export_csv, render_overlay
from .imageio import InputImage, load_image, normalize, resize_bilinear
from .vit import (
    PRESETS,
    Prediction,
    TokenSequence,
    TokenSubset,
    ViTConfig,
    ViTSubsetClassifier,
    ViTWeights,
    embed,
    forward_subset,
    patchify,
    predict,
)
from .weights_io import (
    load_vit_weights,
    read_archive,
    validate_vit_schema,
    write_archive,
)

__version__ = "0.1.0"

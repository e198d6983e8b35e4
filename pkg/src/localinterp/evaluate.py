"""Matching-based accuracy metrics against ground-truth annotations.

All errors are normalized by the crop diagonal (sqrt(2) in unit-square
coordinates) so 1.0 bounds any point distance; a missing interpretation is
penalized at the maximum error of 1.0 per slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .geometry import (
    ContourPrimitive,
    PointPrimitive,
    Primitive,
    RegionPrimitive,
    primitive_type_name,
    resample_contour,
)
from .schema import Assignment, ModelSchema

DIAGONAL = float(np.sqrt(2.0))


@dataclass(frozen=True)
class EvalConfig:
    k_samples: int = 20
    correct_threshold: float = 0.15
    normalizer: float = DIAGONAL

    def __post_init__(self):
        if self.correct_threshold <= 0:
            raise InvalidArgument("correct_threshold must be positive")


@dataclass
class MetricsReport:
    per_slot_mean_error: dict[str, float]
    per_slot_fraction_correct: dict[str, float]
    overall_mean_error: float
    overall_fraction_correct: float
    image_count: int
    threshold: float

    def to_dict(self) -> dict:
        return {
            "per_slot_mean_error": self.per_slot_mean_error,
            "per_slot_fraction_correct": self.per_slot_fraction_correct,
            "overall_mean_error": self.overall_mean_error,
            "overall_fraction_correct": self.overall_fraction_correct,
            "image_count": self.image_count,
            "threshold": self.threshold,
        }


def primitive_error(pred: Primitive, gt: Primitive, config: EvalConfig = EvalConfig()) -> float:
    """Diagonal-normalized distance between prediction and ground truth.

    Points compare positions, regions compare centroids, contours compare
    ordered resampled points (minimum over the two traversal directions).
    """
    if primitive_type_name(pred) != primitive_type_name(gt):
        raise InvalidArgument("pred and gt must be the same primitive type")
    if isinstance(pred, PointPrimitive):
        d = np.hypot(pred.position[0] - gt.position[0], pred.position[1] - gt.position[1])
    elif isinstance(pred, RegionPrimitive):
        d = np.hypot(pred.centroid[0] - gt.centroid[0], pred.centroid[1] - gt.centroid[1])
    else:
        a = resample_contour(pred, config.k_samples)
        b = resample_contour(gt, config.k_samples)
        forward = np.linalg.norm(a - b, axis=1).mean()
        backward = np.linalg.norm(a - b[::-1], axis=1).mean()
        d = min(forward, backward)
    return float(d) / config.normalizer


def evaluate_dataset(
    predictions: dict[str, Assignment | None],
    ground_truth: dict[str, Assignment],
    schema: ModelSchema,
    config: EvalConfig = EvalConfig(),
) -> MetricsReport:
    """Aggregate per-slot errors over images keyed by image id.

    `predictions[image_id] = None` marks a no-interpretation result and counts
    as error 1.0 on every slot.
    """
    if not predictions:
        raise InvalidArgument("empty prediction set")
    if set(predictions) != set(ground_truth):
        raise InvalidArgument("prediction and ground-truth image ids must match")
    slot_errors: dict[str, list[float]] = {s.slot_id: [] for s in schema.slots}
    for image_id in sorted(predictions):
        pred = predictions[image_id]
        gt = ground_truth[image_id]
        for slot in schema.slots:
            if pred is None or slot.slot_id not in pred.bindings:
                err = 1.0
            else:
                err = min(
                    1.0,
                    primitive_error(pred.bindings[slot.slot_id], gt.bindings[slot.slot_id], config),
                )
            slot_errors[slot.slot_id].append(err)
    per_mean = {s: float(np.mean(v)) for s, v in slot_errors.items()}
    per_frac = {
        s: float(np.mean([e <= config.correct_threshold for e in v]))
        for s, v in slot_errors.items()
    }
    pooled = [e for v in slot_errors.values() for e in v]
    return MetricsReport(
        per_slot_mean_error=per_mean,
        per_slot_fraction_correct=per_frac,
        overall_mean_error=float(np.mean(pooled)),
        overall_fraction_correct=float(np.mean([e <= config.correct_threshold for e in pooled])),
        image_count=len(predictions),
        threshold=config.correct_threshold,
    )


@dataclass
class AblationResult:
    ratio: float | None  # None when the reduced fraction is zero
    per_slot_ratios: dict[str, float | None]
    full_fraction: float
    reduced_fraction: float


def ablation_compare(full: MetricsReport, reduced: MetricsReport) -> AblationResult:
    """Fraction-correct ratio of the full relation library over the reduced one."""
    if set(full.per_slot_fraction_correct) != set(reduced.per_slot_fraction_correct):
        raise InvalidArgument("reports cover different slot sets")
    per_slot: dict[str, float | None] = {}
    for s, f in full.per_slot_fraction_correct.items():
        r = reduced.per_slot_fraction_correct[s]
        per_slot[s] = (f / r) if r > 0 else None
    ratio = (
        full.overall_fraction_correct / reduced.overall_fraction_correct
        if reduced.overall_fraction_correct > 0
        else None
    )
    return AblationResult(
        ratio=ratio,
        per_slot_ratios=per_slot,
        full_fraction=full.overall_fraction_correct,
        reduced_fraction=reduced.overall_fraction_correct,
    )

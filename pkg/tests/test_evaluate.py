from __future__ import annotations

import numpy as np
import pytest

from localinterp.errors import InvalidArgument
from localinterp.evaluate import (
    DIAGONAL,
    EvalConfig,
    MetricsReport,
    ablation_compare,
    evaluate_dataset,
    primitive_error,
)
from localinterp.geometry import ContourPrimitive, PointPrimitive, RegionPrimitive
from localinterp.schema import Assignment, ModelSchema, Slot


def test_identical_points_zero():
    p = PointPrimitive(position=(0.3, 0.4))
    assert primitive_error(p, p) == 0.0


def test_point_offset_345():
    a = PointPrimitive(position=(0.2, 0.2))
    b = PointPrimitive(position=(0.5, 0.6))
    assert primitive_error(a, b) == pytest.approx(0.5 / np.sqrt(2))


def test_contour_reversal_zero():
    c = ContourPrimitive(vertices=((0.1, 0.1), (0.5, 0.3), (0.9, 0.2)))
    r = ContourPrimitive(vertices=tuple(reversed(c.vertices)))
    assert primitive_error(c, r) == pytest.approx(0.0, abs=1e-12)


def test_region_centroid_distance():
    a = RegionPrimitive(boundary=((0.1, 0.1), (0.3, 0.1), (0.3, 0.3), (0.1, 0.3)))
    b = RegionPrimitive(boundary=((0.4, 0.5), (0.6, 0.5), (0.6, 0.7), (0.4, 0.7)))
    assert primitive_error(a, b) == pytest.approx(0.5 / np.sqrt(2))


def test_type_mismatch_rejected():
    with pytest.raises(InvalidArgument):
        primitive_error(
            PointPrimitive(position=(0.1, 0.1)),
            ContourPrimitive(vertices=((0, 0), (1, 1))),
        )


def test_error_symmetric():
    a = ContourPrimitive(vertices=((0.1, 0.1), (0.6, 0.4)))
    b = ContourPrimitive(vertices=((0.2, 0.3), (0.7, 0.1)))
    assert primitive_error(a, b) == pytest.approx(primitive_error(b, a))


# ---------------------------------------------------------------------------
# evaluate_dataset


def two_point_schema():
    return ModelSchema(
        class_name="pair",
        slots=(Slot("u", "u", "point"), Slot("v", "v", "point")),
        relation_tier="REDUCED",
    )


def gt_for(ids):
    return {
        i: Assignment(
            bindings={"u": PointPrimitive(position=(0.2, 0.2)), "v": PointPrimitive(position=(0.8, 0.8))}
        )
        for i in ids
    }


def test_perfect_predictions():
    schema = two_point_schema()
    gt = gt_for(["a", "b"])
    report = evaluate_dataset(dict(gt), gt, schema)
    assert report.overall_mean_error == 0.0
    assert report.overall_fraction_correct == 1.0


def test_one_offset_slot_averaging():
    schema = two_point_schema()
    gt = gt_for(["a"])
    pred = {
        "a": Assignment(
            bindings={
                "u": PointPrimitive(position=(0.2, 0.2)),
                "v": PointPrimitive(position=(0.8, 0.3)),  # off by 0.5
            }
        )
    }
    report = evaluate_dataset(pred, gt, schema)
    assert report.overall_mean_error == pytest.approx(0.25 / np.sqrt(2))


def test_none_prediction_max_error():
    schema = two_point_schema()
    gt = gt_for(["a"])
    report = evaluate_dataset({"a": None}, gt, schema)
    assert report.overall_mean_error == 1.0
    assert report.overall_fraction_correct == 0.0


def test_empty_predictions_rejected():
    with pytest.raises(InvalidArgument):
        evaluate_dataset({}, {}, two_point_schema())


def test_id_mismatch_rejected():
    schema = two_point_schema()
    with pytest.raises(InvalidArgument):
        evaluate_dataset(gt_for(["a"]), gt_for(["b"]), schema)


def test_permutation_invariant():
    schema = two_point_schema()
    ids = [f"im{i}" for i in range(6)]
    gt = gt_for(ids)
    rng = np.random.default_rng(0)
    pred = {
        i: Assignment(
            bindings={
                "u": PointPrimitive(position=tuple(rng.uniform(0, 1, 2))),
                "v": PointPrimitive(position=tuple(rng.uniform(0, 1, 2))),
            }
        )
        for i in ids
    }
    r1 = evaluate_dataset(pred, gt, schema)
    shuffled = {i: pred[i] for i in reversed(ids)}
    r2 = evaluate_dataset(shuffled, gt, schema)
    assert r1.overall_mean_error == r2.overall_mean_error
    assert r1.per_slot_mean_error == r2.per_slot_mean_error


# ---------------------------------------------------------------------------
# ablation_compare


def report_with(fraction):
    return MetricsReport(
        per_slot_mean_error={"u": 0.1},
        per_slot_fraction_correct={"u": fraction},
        overall_mean_error=0.1,
        overall_fraction_correct=fraction,
        image_count=10,
        threshold=0.15,
    )


def test_ablation_paper_factor():
    result = ablation_compare(report_with(0.87), report_with(0.60))
    assert result.ratio == pytest.approx(1.45, abs=1e-9)


def test_ablation_identical_reports():
    result = ablation_compare(report_with(0.5), report_with(0.5))
    assert result.ratio == 1.0


def test_ablation_zero_reduced_undefined():
    result = ablation_compare(report_with(0.5), report_with(0.0))
    assert result.ratio is None
    assert result.full_fraction == 0.5 and result.reduced_fraction == 0.0

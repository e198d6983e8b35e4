"""On-disk formats: annotations, dataset manifests, model files, metrics, and
interpretation outputs. Everything is canonical JSON (sorted keys, fixed
indentation) so write -> read -> write round-trips byte-identically; images are
8-bit grayscale PNG mapped to [0,1] by /255."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .candidates import CandidateParams
from .edgemap import EdgeParams
from .errors import FormatError, InvalidArgument
from .evaluate import MetricsReport
from .forest import TrainedForest
from .geometry import (
    ContourPrimitive,
    LocalRegionImage,
    PointPrimitive,
    Primitive,
    RegionPrimitive,
    primitive_type_name,
)
from .pipeline import GeometricGate, Interval, TrainedModel
from .relations import RelationDescriptor, RelationSchema
from .schema import Assignment, ModelSchema, Slot

FORMAT_VERSION = "1.0"


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _check_version(d: dict, what: str):
    v = d.get("format_version")
    if not isinstance(v, str):
        raise FormatError(f"{what}: missing format_version")
    major = v.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise FormatError(f"{what}: unsupported format_version {v}")


# ---------------------------------------------------------------------------
# primitives


def primitive_to_dict(slot_id: str, p: Primitive) -> dict:
    t = primitive_type_name(p)
    d: dict = {"slot_id": slot_id, "type": t}
    if isinstance(p, PointPrimitive):
        d["coords"] = [[p.position[0], p.position[1]]]
        d["kind"] = p.kind
        d["strength"] = p.strength
    elif isinstance(p, ContourPrimitive):
        d["coords"] = [[x, y] for x, y in p.vertices]
        d["closed"] = p.closed
    else:
        d["coords"] = [[x, y] for x, y in p.boundary]
    return d


def primitive_from_dict(d: dict) -> tuple[str, Primitive]:
    t = d["type"]
    coords = [(float(x), float(y)) for x, y in d["coords"]]
    if t == "point":
        p: Primitive = PointPrimitive(
            position=coords[0], kind=d.get("kind", "generic"), strength=float(d.get("strength", 0.0))
        )
    elif t == "contour":
        p = ContourPrimitive(vertices=tuple(coords), closed=bool(d.get("closed", False)))
    elif t == "region":
        p = RegionPrimitive(boundary=tuple(coords))
    else:
        raise FormatError(f"unknown primitive type {t!r}")
    return d["slot_id"], p


# ---------------------------------------------------------------------------
# annotations


@dataclass
class AnnotationRecord:
    image_id: str
    schema_name: str
    bindings: dict[str, Primitive]
    annotator: str = ""
    refined: bool = False

    def to_assignment(self) -> Assignment:
        return Assignment(bindings=dict(self.bindings))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "image_id": self.image_id,
            "schema_name": self.schema_name,
            "annotator": self.annotator,
            "refined": self.refined,
            "bindings": [
                primitive_to_dict(sid, p) for sid, p in sorted(self.bindings.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        _check_version(d, "annotation")
        bindings = dict(primitive_from_dict(b) for b in d["bindings"])
        return cls(
            image_id=d["image_id"],
            schema_name=d["schema_name"],
            bindings=bindings,
            annotator=d.get("annotator", ""),
            refined=bool(d.get("refined", False)),
        )

    def validate(self, schema: ModelSchema):
        for slot in schema.slots:
            if slot.slot_id not in self.bindings:
                raise InvalidArgument(f"annotation missing slot {slot.slot_id!r}")
            if primitive_type_name(self.bindings[slot.slot_id]) != slot.primitive_type:
                raise InvalidArgument(f"annotation slot {slot.slot_id!r} has wrong type")
        if len(self.bindings) != len(schema.slots):
            raise InvalidArgument("annotation binds unknown slots")


def save_annotation(record: AnnotationRecord, path: str | Path):
    Path(path).write_text(canonical_dumps(record.to_dict()))


def load_annotation(path: str | Path) -> AnnotationRecord:
    return AnnotationRecord.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    image: str  # path relative to the manifest
    label: str  # "positive" | "negative"
    split: str  # "train" | "test"
    annotation: str | None = None


@dataclass
class DatasetManifest:
    schema_name: str
    entries: list[ManifestEntry]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "schema_name": self.schema_name,
            "entries": [
                {
                    "image": e.image,
                    "label": e.label,
                    "split": e.split,
                    "annotation": e.annotation,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        _check_version(d, "manifest")
        entries = []
        for e in d["entries"]:
            if e["label"] not in ("positive", "negative") or e["split"] not in ("train", "test"):
                raise FormatError(f"bad manifest entry {e}")
            entries.append(
                ManifestEntry(
                    image=e["image"],
                    label=e["label"],
                    split=e["split"],
                    annotation=e.get("annotation"),
                )
            )
        return cls(schema_name=d["schema_name"], entries=entries)


def save_manifest(manifest: DatasetManifest, path: str | Path):
    Path(path).write_text(canonical_dumps(manifest.to_dict()))


def load_manifest(path: str | Path) -> DatasetManifest:
    return DatasetManifest.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# images


def save_image(image: LocalRegionImage, path: str | Path):
    arr = np.clip(np.round(image.intensities * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(str(path))


def load_image(path: str | Path, image_id: str | None = None) -> LocalRegionImage:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    h, w = arr.shape
    return LocalRegionImage(w, h, arr, id=image_id or Path(path).stem)


# ---------------------------------------------------------------------------
# model files


def _interval_to_list(iv: Interval) -> list[float]:
    return [iv.lo, iv.hi]


def _schema_to_dict(schema: ModelSchema) -> dict:
    return {
        "class_name": schema.class_name,
        "relation_tier": schema.relation_tier,
        "slots": [
            {"slot_id": s.slot_id, "name": s.name, "primitive_type": s.primitive_type}
            for s in schema.slots
        ],
    }


def _schema_from_dict(d: dict) -> ModelSchema:
    return ModelSchema(
        class_name=d["class_name"],
        slots=tuple(Slot(s["slot_id"], s["name"], s["primitive_type"]) for s in d["slots"]),
        relation_tier=d["relation_tier"],
    )


def model_to_dict(model: TrainedModel) -> dict:
    gate = model.gate
    return {
        "format_version": FORMAT_VERSION,
        "schema": _schema_to_dict(model.schema),
        "relation_schema": [
            {
                "name": r.name,
                "arity": r.arity,
                "slot_indices": list(r.slot_indices),
                "feature_count": r.feature_count,
                "tier": r.tier,
            }
            for r in model.relation_schema.descriptors
        ],
        "gate": {
            "slot_boxes": {
                sid: [_interval_to_list(bx), _interval_to_list(by)]
                for sid, (bx, by) in sorted(gate.slot_boxes.items())
            },
            "pair_ranges": {
                f"{si}|{sj}": [_interval_to_list(rx), _interval_to_list(ry)]
                for (si, sj), (rx, ry) in sorted(gate.pair_ranges.items())
            },
            "slot_variance": dict(sorted(gate.slot_variance.items())),
        },
        "edge_params": {
            "smoothing_sigma": model.edge_params.smoothing_sigma,
            "high_threshold_percentile": model.edge_params.high_threshold_percentile,
            "low_fraction": model.edge_params.low_fraction,
            "gap_jump": model.edge_params.gap_jump,
            "gap_penalty": model.edge_params.gap_penalty,
            "bridge_ratio_beta": model.edge_params.bridge_ratio_beta,
            "snap_radius": model.edge_params.snap_radius,
        },
        "candidate_params": {
            "max_points_per_kind": model.candidate_params.max_points_per_kind,
            "max_contours": model.candidate_params.max_contours,
            "max_regions": model.candidate_params.max_regions,
        },
        "forest": model.forest.to_dict(),
        "iterations_run": model.iterations_run,
        "accept_threshold": model.accept_threshold,
        "training_meta": model.training_meta,
    }


def model_from_dict(d: dict) -> TrainedModel:
    _check_version(d, "model")
    schema = _schema_from_dict(d["schema"])
    relation_schema = RelationSchema(
        tuple(
            RelationDescriptor(
                name=r["name"],
                arity=r["arity"],
                slot_indices=tuple(r["slot_indices"]),
                feature_count=r["feature_count"],
                tier=r["tier"],
            )
            for r in d["relation_schema"]
        )
    )
    g = d["gate"]
    gate = GeometricGate(
        slot_boxes={
            sid: (Interval(*bx), Interval(*by)) for sid, (bx, by) in g["slot_boxes"].items()
        },
        pair_ranges={
            tuple(k.split("|")): (Interval(*rx), Interval(*ry))
            for k, (rx, ry) in g["pair_ranges"].items()
        },
        slot_variance={k: float(v) for k, v in g["slot_variance"].items()},
    )
    return TrainedModel(
        schema=schema,
        relation_schema=relation_schema,
        forest=TrainedForest.from_dict(d["forest"]),
        gate=gate,
        edge_params=EdgeParams(**d["edge_params"]),
        candidate_params=CandidateParams(**d["candidate_params"]),
        iterations_run=int(d["iterations_run"]),
        accept_threshold=float(d["accept_threshold"]),
        training_meta=d.get("training_meta", {}),
    )


def save_model(model: TrainedModel, path: str | Path):
    Path(path).write_text(canonical_dumps(model_to_dict(model)))


def load_model(path: str | Path) -> TrainedModel:
    return model_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# interpretations and metrics


def interpretation_to_dict(
    image_id: str, assignment: Assignment | None, score: float, threshold: float, diagnostics: dict
) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "image_id": image_id,
        "score": score,
        "accepted": bool(assignment is not None and score >= threshold),
        "bindings": (
            [primitive_to_dict(sid, p) for sid, p in sorted(assignment.bindings.items())]
            if assignment is not None
            else None
        ),
        "diagnostics": diagnostics,
    }


def interpretation_from_dict(d: dict) -> tuple[str, Assignment | None, float]:
    _check_version(d, "interpretation")
    if d["bindings"] is None:
        return d["image_id"], None, float(d["score"])
    bindings = dict(primitive_from_dict(b) for b in d["bindings"])
    return d["image_id"], Assignment(bindings=bindings, score=float(d["score"])), float(d["score"])


def save_interpretation(d: dict, path: str | Path):
    Path(path).write_text(canonical_dumps(d))


def load_interpretation(path: str | Path):
    return interpretation_from_dict(json.loads(Path(path).read_text()))


def metrics_to_dict(report: MetricsReport) -> dict:
    return {"format_version": FORMAT_VERSION, **report.to_dict()}


def save_metrics(report: MetricsReport, json_path: str | Path, table_path: str | Path):
    Path(json_path).write_text(canonical_dumps(metrics_to_dict(report)))
    lines = ["slot\tmean_error\tfraction_correct"]
    for slot in sorted(report.per_slot_mean_error):
        lines.append(
            f"{slot}\t{report.per_slot_mean_error[slot]!r}\t{report.per_slot_fraction_correct[slot]!r}"
        )
    lines.append(
        f"OVERALL\t{report.overall_mean_error!r}\t{report.overall_fraction_correct!r}"
    )
    Path(table_path).write_text("\n".join(lines) + "\n")


def load_metrics(path: str | Path) -> MetricsReport:
    d = json.loads(Path(path).read_text())
    _check_version(d, "metrics")
    return MetricsReport(
        per_slot_mean_error=d["per_slot_mean_error"],
        per_slot_fraction_correct=d["per_slot_fraction_correct"],
        overall_mean_error=d["overall_mean_error"],
        overall_fraction_correct=d["overall_fraction_correct"],
        image_count=d["image_count"],
        threshold=d["threshold"],
    )

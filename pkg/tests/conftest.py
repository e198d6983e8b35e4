"""Shared fixtures: constructed images and a small trained model."""

from __future__ import annotations

import numpy as np
import pytest

from localinterp.candidates import CandidatePool
from localinterp.edgemap import EdgeParams, compute_edge_map
from localinterp.geometry import LocalRegionImage
from localinterp.pipeline import ImageContext, TrainConfig, train_interpretation_model
from localinterp.synth import SceneParams, generate_negative_image, generate_scene, head8_schema


def make_image(arr: np.ndarray, image_id: str = "img") -> LocalRegionImage:
    arr = np.asarray(arr, dtype=np.float64)
    return LocalRegionImage(arr.shape[1], arr.shape[0], arr, id=image_id)


def step_image(n: int = 32) -> LocalRegionImage:
    """Vertical intensity step: left half 0.0, right half 1.0."""
    arr = np.zeros((n, n))
    arr[:, n // 2 :] = 1.0
    return make_image(arr, "step")


def square_image(n: int = 64, side: int = 16) -> LocalRegionImage:
    """White centered square on black."""
    arr = np.zeros((n, n))
    lo = (n - side) // 2
    arr[lo : lo + side, lo : lo + side] = 1.0
    return make_image(arr, "square")


def disk_image(n: int = 64, radius: int = 10, dark: bool = True) -> LocalRegionImage:
    yy, xx = np.mgrid[0:n, 0:n]
    inside = (xx - n / 2) ** 2 + (yy - n / 2) ** 2 <= radius**2
    arr = np.ones((n, n)) if dark else np.zeros((n, n))
    arr[inside] = 0.0 if dark else 1.0
    return make_image(arr, "disk")


def capped_context(image, model, cap: int = 5) -> ImageContext:
    """Context whose pool keeps at most `cap` gate-passing candidates per slot.

    Makes exhaustive search tractable while beam and exhaustive inference see
    the identical candidate set.
    """
    ctx = ImageContext(image, model.edge_params, model.candidate_params)
    pool = ctx.pool
    gate, schema = model.gate, model.schema
    by_type = {"point": pool.points, "contour": pool.contours, "region": pool.regions}
    slots_by_type: dict[str, list[str]] = {}
    for slot in schema.slots:
        slots_by_type.setdefault(slot.primitive_type, []).append(slot.slot_id)
    kept: dict[str, list] = {}
    for tname, cands in by_type.items():
        counts = {sid: 0 for sid in slots_by_type.get(tname, [])}
        keep = []
        for p in cands:
            passing = [sid for sid in counts if gate.passes_slot(sid, p)]
            if not passing or any(counts[sid] >= cap for sid in passing):
                continue
            keep.append(p)
            for sid in passing:
                counts[sid] += 1
        kept[tname] = keep
    ctx._pool = CandidatePool(
        points=kept["point"],
        contours=kept["contour"],
        regions=kept["region"],
        source_image_id=pool.source_image_id,
    )
    return ctx


@pytest.fixture(scope="session")
def step_edges():
    return compute_edge_map(step_image(), EdgeParams())


@pytest.fixture(scope="session")
def small_scenes():
    params = SceneParams()
    return [generate_scene(params, 1000 + i) for i in range(30)]


@pytest.fixture(scope="session")
def small_negatives():
    params = SceneParams()
    return [generate_negative_image(params, 5000 + i) for i in range(40)]


@pytest.fixture(scope="session")
def small_model(small_scenes, small_negatives):
    """A quickly trained end-to-end model shared by pipeline/synth/format tests."""
    schema = head8_schema("FULL")
    return train_interpretation_model(
        [s.annotation for s in small_scenes],
        [s.image.id for s in small_scenes],
        {s.image.id: s.image for s in small_scenes},
        small_negatives,
        schema,
        TrainConfig(seed=11, hard_negative_iterations=2, negatives_per_iteration=60),
    )

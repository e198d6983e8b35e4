from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_image, step_image
from localinterp.edgemap import UNREACHABLE_RATIO, EdgeParams, compute_edge_map
from localinterp.errors import InvalidArgument
from localinterp.geometry import (
    CANONICAL_SAMPLES,
    ContourPrimitive,
    PointPrimitive,
    RegionPrimitive,
)
from localinterp.relations import (
    COVER_TOLERANCE,
    build_relation_schema,
    compute_relation_vector,
    rel_bridging,
    rel_containment,
    rel_continuity,
    rel_cover,
    rel_displacement,
    rel_ends_in,
    rel_parallelism,
    unary_features,
)
from localinterp.schema import Assignment, ModelSchema, Slot

SETTINGS = settings(max_examples=200, deadline=None, derandomize=True)


def seeded_contour(seed: int, n: int = 5) -> ContourPrimitive:
    rng = np.random.default_rng(seed)
    steps = rng.uniform(0.02, 0.08, size=(n, 2)) * rng.choice([-1.0, 1.0], size=(n, 2))
    pts = np.cumsum(steps, axis=0) * 0.5 + 0.5
    return ContourPrimitive(vertices=tuple(map(tuple, pts)))


def octagon(cx, cy, r) -> RegionPrimitive:
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    return RegionPrimitive(boundary=tuple((cx + r * np.cos(a), cy + r * np.sin(a)) for a in ang))


def scale_about_center(prim, s):
    def sc(p):
        return (0.5 + s * (p[0] - 0.5), 0.5 + s * (p[1] - 0.5))

    if isinstance(prim, PointPrimitive):
        return PointPrimitive(position=sc(prim.position), kind=prim.kind, strength=prim.strength)
    if isinstance(prim, ContourPrimitive):
        return ContourPrimitive(vertices=tuple(sc(p) for p in prim.vertices), closed=prim.closed)
    return RegionPrimitive(boundary=tuple(sc(p) for p in prim.boundary))


# ---------------------------------------------------------------------------
# displacement


def test_displacement_3_4_5():
    a = PointPrimitive(position=(0.2, 0.2))
    b = PointPrimitive(position=(0.5, 0.6))
    assert rel_displacement(a, b) == pytest.approx((0.3, 0.4, 0.5))


def test_displacement_self_zero():
    a = PointPrimitive(position=(0.3, 0.7))
    assert rel_displacement(a, a) == (0.0, 0.0, 0.0)


@SETTINGS
@given(st.integers(0, 5000), st.integers(0, 5000))
def test_displacement_antisymmetric(s1, s2):
    a, b = seeded_contour(s1), seeded_contour(s2)
    dx, dy, d = rel_displacement(a, b)
    rdx, rdy, rd = rel_displacement(b, a)
    assert (dx, dy, d) == pytest.approx((-rdx, -rdy, rd), abs=1e-12)


# ---------------------------------------------------------------------------
# cover


def test_cover_on_vertex():
    c = ContourPrimitive(vertices=((0.2, 0.2), (0.8, 0.2)))
    assert rel_cover(PointPrimitive(position=(0.2, 0.2)), c) == (1.0, 0.0)


def test_cover_far_point():
    c = ContourPrimitive(vertices=((0.2, 0.2), (0.8, 0.2)))
    covered, d = rel_cover(PointPrimitive(position=(0.5, 0.4)), c)
    assert covered == 0.0 and d == pytest.approx(0.2)


def test_cover_boundary_inclusive():
    c = ContourPrimitive(vertices=((0.2, 0.2), (0.8, 0.2)))
    covered, d = rel_cover(PointPrimitive(position=(0.5, 0.2 + COVER_TOLERANCE)), c)
    assert covered == 1.0 and d == pytest.approx(COVER_TOLERANCE)


# ---------------------------------------------------------------------------
# containment / ends_in


def test_containment_centroid():
    r = octagon(0.5, 0.5, 0.2)
    frac, bdist = rel_containment(PointPrimitive(position=(0.5, 0.5)), r)
    assert frac == 1.0 and bdist > 0


def test_containment_outside():
    r = octagon(0.5, 0.5, 0.1)
    frac, bdist = rel_containment(PointPrimitive(position=(0.9, 0.9)), r)
    assert frac == 0.0 and bdist < 0


def test_containment_half_in_segment():
    r = RegionPrimitive(boundary=((0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (0.0, 1.0)))
    c = ContourPrimitive(vertices=((0.25, 0.5), (0.75, 0.5)))
    frac, _ = rel_containment(c, r)
    assert frac == pytest.approx(0.5, abs=1.5 / CANONICAL_SAMPLES)


def test_ends_in():
    r = octagon(0.5, 0.5, 0.15)
    c = ContourPrimitive(vertices=((0.1, 0.5), (0.5, 0.5)))
    assert rel_ends_in(c, r) == (0.0, 1.0)
    out = ContourPrimitive(vertices=((0.05, 0.05), (0.1, 0.9)))
    assert rel_ends_in(out, r) == (0.0, 0.0)
    closed = ContourPrimitive(vertices=((0.4, 0.4), (0.6, 0.4), (0.5, 0.6)), closed=True)
    assert rel_ends_in(closed, r) == (0.0, 0.0)


# ---------------------------------------------------------------------------
# continuity / parallelism


def test_continuity_collinear():
    c1 = ContourPrimitive(vertices=((0.0, 0.0), (0.5, 0.0)))
    c2 = ContourPrimitive(vertices=((0.5, 0.0), (1.0, 0.0)))
    gap, angle = rel_continuity(c1, c2)
    assert gap == pytest.approx(0.0, abs=1e-12) and angle == pytest.approx(0.0, abs=1e-9)


def test_continuity_perpendicular():
    c1 = ContourPrimitive(vertices=((0.0, 0.5), (0.5, 0.5)))
    c2 = ContourPrimitive(vertices=((0.5, 0.5), (0.5, 0.0)))
    gap, angle = rel_continuity(c1, c2)
    assert gap == pytest.approx(0.0, abs=1e-12) and angle == pytest.approx(np.pi / 2, abs=1e-9)


def test_continuity_closed_rejected():
    c1 = ContourPrimitive(vertices=((0.4, 0.4), (0.6, 0.4), (0.5, 0.6)), closed=True)
    c2 = ContourPrimitive(vertices=((0.0, 0.0), (0.5, 0.0)))
    with pytest.raises(InvalidArgument):
        rel_continuity(c1, c2)


@SETTINGS
@given(st.integers(0, 5000), st.integers(0, 5000))
def test_continuity_symmetric(s1, s2):
    c1, c2 = seeded_contour(s1), seeded_contour(s2 + 10_000)
    assert rel_continuity(c1, c2) == pytest.approx(rel_continuity(c2, c1), abs=1e-9)


def test_parallelism_parallel():
    c1 = ContourPrimitive(vertices=((0.1, 0.3), (0.9, 0.3)))
    c2 = ContourPrimitive(vertices=((0.1, 0.4), (0.9, 0.4)))
    diff, spread = rel_parallelism(c1, c2)
    assert diff == pytest.approx(0.0, abs=1e-9) and spread == pytest.approx(0.0, abs=1e-6)


def test_parallelism_perpendicular():
    c1 = ContourPrimitive(vertices=((0.1, 0.5), (0.9, 0.5)))
    c2 = ContourPrimitive(vertices=((0.5, 0.1), (0.5, 0.9)))
    diff, _ = rel_parallelism(c1, c2)
    assert diff == pytest.approx(np.pi / 2, abs=1e-9)


@SETTINGS
@given(st.integers(0, 5000), st.integers(0, 5000))
def test_parallelism_swap_and_reversal_invariant(s1, s2):
    c1, c2 = seeded_contour(s1), seeded_contour(s2 + 20_000)
    r1 = ContourPrimitive(vertices=tuple(reversed(c1.vertices)))
    base = rel_parallelism(c1, c2)
    assert rel_parallelism(c2, c1) == pytest.approx(base, abs=1e-9)
    assert rel_parallelism(r1, c2)[0] == pytest.approx(base[0], abs=1e-9)


# ---------------------------------------------------------------------------
# bridging


def test_bridging_along_step_edge(step_edges):
    col = 15.5 / 32
    c1 = ContourPrimitive(vertices=((col, 4 / 32), (col, 8 / 32)))
    c2 = ContourPrimitive(vertices=((col, 24 / 32), (col, 28 / 32)))
    bridged, ratio = rel_bridging(c1, c2, step_edges)
    assert bridged == 1.0 and ratio < 1.8


def test_bridging_blank_space():
    arr = np.full((64, 64), 0.5)
    arr[10:20, 10:20] = 1.0
    arr[40:50, 40:50] = 1.0
    edges = compute_edge_map(make_image(arr))
    c1 = ContourPrimitive(vertices=((10 / 64, 15 / 64), (19 / 64, 15 / 64)))
    c2 = ContourPrimitive(vertices=((40 / 64, 45 / 64), (49 / 64, 45 / 64)))
    bridged, ratio = rel_bridging(c1, c2, edges)
    assert bridged == 0.0 and ratio == UNREACHABLE_RATIO


def test_bridging_corridor_excludes_path(step_edges):
    col = 15.5 / 32
    c1 = ContourPrimitive(vertices=((col, 4 / 32), (col, 8 / 32)))
    c2 = ContourPrimitive(vertices=((col, 24 / 32), (col, 28 / 32)))
    # corridor on the far left, away from the only connecting edge
    corridor = RegionPrimitive(boundary=((0.0, 0.0), (0.2, 0.0), (0.2, 1.0), (0.0, 1.0)))
    bridged, ratio = rel_bridging(c1, c2, step_edges, corridor=corridor)
    assert bridged == 0.0 and ratio == UNREACHABLE_RATIO


def test_bridging_same_instance_rejected(step_edges):
    c = ContourPrimitive(vertices=((0.2, 0.2), (0.8, 0.8)))
    with pytest.raises(InvalidArgument):
        rel_bridging(c, c, step_edges)


@SETTINGS
@given(st.integers(0, 300), st.integers(0, 300))
def test_bridging_symmetric(step_edges, s1, s2):
    c1, c2 = seeded_contour(s1), seeded_contour(s2 + 30_000)
    assert rel_bridging(c1, c2, step_edges) == rel_bridging(c2, c1, step_edges)


# ---------------------------------------------------------------------------
# unary features


def test_point_unary():
    p = PointPrimitive(position=(0.5, 0.5), strength=2.0)
    img = make_image(np.full((32, 32), 0.7))
    assert unary_features(p, img) == (0.5, 0.5, 2.0)


def test_straight_contour_unary_on_constant():
    img = make_image(np.full((32, 32), 0.7))
    c = ContourPrimitive(vertices=((0.2, 0.5), (0.8, 0.5)))
    x, y, length, mean_k, std_k, band_lo, band_hi = unary_features(c, img)
    assert (mean_k, std_k) == (0.0, 0.0)
    assert band_lo == pytest.approx(band_hi) == pytest.approx(0.7)
    assert length == pytest.approx(0.6)


def test_region_unary_on_constant():
    img = make_image(np.full((32, 32), 0.7))
    r = RegionPrimitive(boundary=((0.1, 0.1), (0.9, 0.1), (0.9, 0.9), (0.1, 0.9)))
    cx, cy, area, mean, std, aspect = unary_features(r, img)
    assert (cx, cy) == pytest.approx((0.5, 0.5))
    assert area == pytest.approx(0.64)
    assert mean == pytest.approx(0.7) and std == pytest.approx(0.0)


def test_contour_band_order_traversal_invariant():
    img = make_image(np.tile(np.linspace(0, 1, 32), (32, 1)))
    c = ContourPrimitive(vertices=((0.5, 0.2), (0.5, 0.8)))
    r = ContourPrimitive(vertices=tuple(reversed(c.vertices)))
    assert unary_features(c, img)[5:] == pytest.approx(unary_features(r, img)[5:], abs=1e-12)


# ---------------------------------------------------------------------------
# schema enumeration


def two_contour_schema(tier):
    return ModelSchema(
        class_name="pair",
        slots=(Slot("a", "a", "contour"), Slot("b", "b", "contour")),
        relation_tier=tier,
    )


def test_reduced_enumeration():
    rel = build_relation_schema(two_contour_schema("REDUCED"))
    names = [d.name for d in rel.descriptors]
    assert names == ["unary", "unary", "displacement", "displacement"]


def test_full_enumeration_adds_contour_relations():
    rel = build_relation_schema(two_contour_schema("FULL"))
    names = {d.name for d in rel.descriptors}
    assert {"continuity", "parallelism", "bridging"} <= names


def test_enumeration_deterministic():
    a = build_relation_schema(two_contour_schema("FULL"))
    b = build_relation_schema(two_contour_schema("FULL"))
    assert a == b


def test_reduced_subset_of_full():
    full = build_relation_schema(two_contour_schema("FULL"))
    reduced = build_relation_schema(two_contour_schema("REDUCED"))
    full_keys = {(d.name, d.slot_indices) for d in full.descriptors}
    reduced_keys = {(d.name, d.slot_indices) for d in reduced.descriptors}
    assert reduced_keys < full_keys


# ---------------------------------------------------------------------------
# vector assembly


def mixed_schema():
    return ModelSchema(
        class_name="mixed",
        slots=(Slot("p", "p", "point"), Slot("c", "c", "contour"), Slot("r", "r", "region")),
        relation_tier="FULL",
    )


def mixed_assignment(region=None):
    return Assignment(
        bindings={
            "p": PointPrimitive(position=(0.4, 0.4), strength=1.0),
            "c": ContourPrimitive(vertices=((0.2, 0.3), (0.6, 0.3), (0.7, 0.5))),
            "r": region or octagon(0.6, 0.6, 0.15),
        }
    )


def test_vector_length_and_flags(step_edges):
    model = mixed_schema()
    rel = build_relation_schema(model)
    img = step_image()
    v = compute_relation_vector(mixed_assignment(), img, step_edges, model, rel)
    assert len(v) == rel.total_length
    assert np.all(np.isfinite(v))
    flags = v[1::2]
    assert set(np.unique(flags)) <= {0.0, 1.0}


def test_degenerate_region_masks_validity(step_edges):
    model = mixed_schema()
    rel = build_relation_schema(model)
    img = step_image()
    # legal polygon, but too small to cover any pixel center of a 32x32 grid
    tiny = RegionPrimitive(
        boundary=((0.5156, 0.5156), (0.5206, 0.5156), (0.5206, 0.5206))
    )
    v = compute_relation_vector(mixed_assignment(region=tiny), img, step_edges, model, rel)
    assert np.all(np.isfinite(v))
    pos = 0
    saw_invalid = False
    for d in rel.descriptors:
        block = v[pos : pos + 2 * d.feature_count]
        if d.name == "unary" and d.slot_indices == (2,):
            assert np.all(block == 0.0)
            saw_invalid = True
        pos += 2 * d.feature_count
    assert saw_invalid


def test_vector_matches_direct_composition(step_edges):
    model = mixed_schema()
    rel = build_relation_schema(model)
    img = step_image()
    a = mixed_assignment()
    v = compute_relation_vector(a, img, step_edges, model, rel)
    direct = []
    from localinterp.relations import RelationContext

    ctx = RelationContext(img, step_edges)
    slot_ids = model.slot_ids()
    for d in rel.descriptors:
        prims = tuple(a.bindings[slot_ids[i]] for i in d.slot_indices)
        for val in ctx.evaluate(d.name, prims):
            direct += [val, 1.0]
    assert np.allclose(v, direct, atol=0)


def test_incomplete_assignment_rejected(step_edges):
    model = mixed_schema()
    rel = build_relation_schema(model)
    a = Assignment(bindings={"p": PointPrimitive(position=(0.4, 0.4))})
    from localinterp.errors import IncompleteAssignment

    with pytest.raises(IncompleteAssignment):
        compute_relation_vector(a, step_image(), step_edges, model, rel)


# ---------------------------------------------------------------------------
# scale behavior of coordinate-level relations


@SETTINGS
@given(st.integers(0, 2000), st.floats(0.5, 1.5))
def test_scale_invariance_of_dimensionless_outputs(seed, s):
    c1, c2 = seeded_contour(seed), seeded_contour(seed + 40_000)
    s1, s2 = scale_about_center(c1, s), scale_about_center(c2, s)
    # angles and flags are scale-invariant
    assert rel_parallelism(s1, s2)[0] == pytest.approx(rel_parallelism(c1, c2)[0], abs=1e-9)
    assert rel_continuity(s1, s2)[1] == pytest.approx(rel_continuity(c1, c2)[1], abs=1e-9)


@SETTINGS
@given(st.integers(0, 2000), st.floats(0.5, 1.5))
def test_scale_homogeneity_of_distances(seed, s):
    c1, c2 = seeded_contour(seed), seeded_contour(seed + 50_000)
    s1, s2 = scale_about_center(c1, s), scale_about_center(c2, s)
    dx, dy, d = rel_displacement(c1, c2)
    sdx, sdy, sd = rel_displacement(s1, s2)
    assert (sdx, sdy, sd) == pytest.approx((s * dx, s * dy, s * d), abs=1e-9)
    assert rel_continuity(s1, s2)[0] == pytest.approx(s * rel_continuity(c1, c2)[0], abs=1e-9)

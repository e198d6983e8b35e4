"""Relation library: unary properties, binary and ternary relations, and
assembly of fixed-layout relation vectors for slot assignments.

Every feature in a relation vector is paired with a validity flag so the
classifier can split on "relation undefined" without sentinel values poisoning
the numeric range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .edgemap import UNREACHABLE_RATIO, EdgeMap, is_bridgeable
from .errors import DegenerateGeometry, InvalidArgument
from .geometry import (
    ContourPrimitive,
    LocalRegionImage,
    PointPrimitive,
    Primitive,
    RegionPrimitive,
    curvature_profile,
    endpoint_tangent,
    point_in_polygon,
    points_in_polygon,
    points_to_polyline_distances,
    principal_orientation,
    reference_point,
    resample_contour,
    signed_boundary_distance,
)
from .schema import Assignment, ModelSchema, check_assignment

COVER_TOLERANCE = 0.03  # normalized units; ~2 px in a 64-px crop
BAND_OFFSET_PX = 2.0  # contour texture bands sit this many pixels off-curve

UNARY_FEATURE_COUNTS = {"point": 3, "contour": 7, "region": 6}


@dataclass(frozen=True)
class RelationDescriptor:
    name: str
    arity: int
    slot_indices: tuple[int, ...]
    feature_count: int
    tier: str  # "SIMPLE" | "COMPOUND"

    def __post_init__(self):
        object.__setattr__(self, "slot_indices", tuple(self.slot_indices))
        if self.arity != len(self.slot_indices):
            raise InvalidArgument("arity must match slot index count")
        if self.feature_count < 1:
            raise InvalidArgument("feature_count must be >= 1")


@dataclass(frozen=True)
class RelationSchema:
    descriptors: tuple[RelationDescriptor, ...]

    def __post_init__(self):
        object.__setattr__(self, "descriptors", tuple(self.descriptors))

    @property
    def total_length(self) -> int:
        return 2 * sum(d.feature_count for d in self.descriptors)


# ---------------------------------------------------------------------------
# individual relations


def rel_displacement(a: Primitive, b: Primitive) -> tuple[float, float, float]:
    ax, ay = reference_point(a)
    bx, by = reference_point(b)
    dx, dy = bx - ax, by - ay
    return dx, dy, float(np.hypot(dx, dy))


def rel_cover(p: PointPrimitive, c: ContourPrimitive) -> tuple[float, float]:
    pt = np.asarray([p.position], dtype=np.float64)
    d = float(points_to_polyline_distances(pt, c._chain)[0])
    return (1.0 if d <= COVER_TOLERANCE else 0.0), d


def rel_containment(x: PointPrimitive | ContourPrimitive, r: RegionPrimitive) -> tuple[float, float]:
    poly = r._poly
    if isinstance(x, PointPrimitive):
        fraction = 1.0 if point_in_polygon(x.position, poly) else 0.0
    else:
        inside = points_in_polygon(x.canonical_samples, poly)
        fraction = float(inside.mean())
    bdist = signed_boundary_distance(reference_point(x), r)
    return fraction, bdist


def rel_ends_in(c: ContourPrimitive, r: RegionPrimitive) -> tuple[float, float]:
    if c.closed:
        return 0.0, 0.0
    poly = r._poly
    first = 1.0 if point_in_polygon(c.vertices[0], poly) else 0.0
    last = 1.0 if point_in_polygon(c.vertices[-1], poly) else 0.0
    return first, last


def _endpoints(c: ContourPrimitive) -> list[tuple[np.ndarray, bool]]:
    pts = c.canonical_samples
    return [(pts[0], True), (pts[-1], False)]


def rel_continuity(c1: ContourPrimitive, c2: ContourPrimitive) -> tuple[float, float]:
    """Gap and turning angle at the closest endpoint pair.

    Angle 0 means c2 continues c1's direction of travel; pi means a full
    reversal. Symmetric under argument swap.
    """
    if c1.closed or c2.closed:
        raise InvalidArgument("continuity requires open contours")
    best = None
    for e1, f1 in _endpoints(c1):
        for e2, f2 in _endpoints(c2):
            d = float(np.linalg.norm(e1 - e2))
            if best is None or d < best[0]:
                best = (d, f1, f2)
    gap, f1, f2 = best
    t1 = endpoint_tangent(c1, f1)  # outward at c1's chosen endpoint
    t2 = endpoint_tangent(c2, f2)
    # continuation direction at c2's endpoint is the inward tangent (-t2)
    cosang = float(np.clip(np.dot(t1, -t2), -1.0, 1.0))
    return gap, float(np.arccos(cosang))


def rel_parallelism(c1: ContourPrimitive, c2: ContourPrimitive) -> tuple[float, float]:
    a1 = principal_orientation(c1)
    a2 = principal_orientation(c2)
    diff = abs(a1 - a2)
    diff = min(diff, np.pi - diff)
    d12 = points_to_polyline_distances(c1.canonical_samples, c2._chain)
    d21 = points_to_polyline_distances(c2.canonical_samples, c1._chain)
    spread = 0.5 * (float(d12.std()) + float(d21.std()))
    return float(diff), spread


def rel_bridging(
    c1: ContourPrimitive,
    c2: ContourPrimitive,
    edges: EdgeMap,
    corridor: RegionPrimitive | None = None,
) -> tuple[float, float]:
    """Best endpoint-pair bridgeability between two contours."""
    if c1 == c2:
        raise InvalidArgument("bridging requires two distinct contours")
    best_flag, best_ratio = False, UNREACHABLE_RATIO
    for e1, _ in _endpoints(c1):
        for e2, _ in _endpoints(c2):
            a = _to_pixel(e1, edges)
            b = _to_pixel(e2, edges)
            if a == b:
                continue
            flag, ratio = is_bridgeable(edges, a, b, corridor)
            best_flag = best_flag or flag
            best_ratio = min(best_ratio, ratio)
    return (1.0 if best_flag else 0.0), best_ratio


def _to_pixel(pt: np.ndarray, edges: EdgeMap) -> tuple[float, float]:
    x = float(np.clip(pt[0] * edges.width, 0, edges.width - 1))
    y = float(np.clip(pt[1] * edges.height, 0, edges.height - 1))
    return x, y


# ---------------------------------------------------------------------------
# unary features


def unary_features(p: Primitive, image: LocalRegionImage) -> tuple[float, ...]:
    if isinstance(p, PointPrimitive):
        x, y = p.position
        return (x, y, p.strength)
    if isinstance(p, ContourPrimitive):
        return _contour_unary(p, image)
    if isinstance(p, RegionPrimitive):
        return _region_unary(p, image)
    raise InvalidArgument(f"not a primitive: {p!r}")


def _check_inside_unit(coords: np.ndarray):
    if np.any(coords < -1e-9) or np.any(coords > 1 + 1e-9):
        raise InvalidArgument("primitive extends outside the image")


def _sample_intensity(image: LocalRegionImage, pix: np.ndarray) -> np.ndarray:
    # map_coordinates expects (row, col) = (y, x)
    coords = np.vstack([pix[:, 1], pix[:, 0]])
    return ndimage.map_coordinates(image.intensities, coords, order=1, mode="nearest")

def _contour_unary(c: ContourPrimitive, image: LocalRegionImage) -> tuple[float, ...]:
    pts = c.canonical_samples
    _check_inside_unit(pts)
    kappa = curvature_profile(c)
    tangents = np.gradient(pts, axis=0)
    norms = np.linalg.norm(tangents, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    tangents /= norms
    normals = np.column_stack([-tangents[:, 1], tangents[:, 0]])
    pix = pts * [image.width, image.height]
    left = _sample_intensity(image, pix + BAND_OFFSET_PX * normals)
    right = _sample_intensity(image, pix - BAND_OFFSET_PX * normals)
    # orient traversal so the darker band is reported first; the pair is then
    # invariant to the direction a detector happened to trace the curve
    bands = sorted([float(left.mean()), float(right.mean())])
    return (
        float(pts[:, 0].mean()),
        float(pts[:, 1].mean()),
        float(c.arc_length),
        float(np.abs(kappa).mean()),
        float(kappa.std()),
        bands[0],
        bands[1],
    )


def _region_unary(r: RegionPrimitive, image: LocalRegionImage) -> tuple[float, ...]:
    poly = r._poly
    _check_inside_unit(poly)
    xs, ys = np.meshgrid(np.arange(image.width), np.arange(image.height))
    pts = np.column_stack([xs.ravel() / image.width, ys.ravel() / image.height])
    inside = points_in_polygon(pts, poly)
    if not inside.any():
        raise DegenerateGeometry("region covers no pixels")
    vals = image.intensities.ravel()[inside]
    # principal-axis aspect ratio from interior pixel scatter
    pin = pts[inside]
    cov = np.cov(pin.T) if len(pin) > 1 else np.zeros((2, 2))
    eig = np.sort(np.linalg.eigvalsh(np.atleast_2d(cov)))[::-1]
    aspect = float(np.sqrt(max(eig[0], 1e-12) / max(eig[-1], 1e-12)))
    cx, cy = r.centroid
    return (cx, cy, r.area, float(vals.mean()), float(vals.std()), aspect)


# ---------------------------------------------------------------------------
# schema enumeration and vector assembly


def build_relation_schema(model: ModelSchema, tier: str | None = None) -> RelationSchema:
    """Deterministic, type-driven enumeration of relation descriptors.

    REDUCED keeps only unary features and pairwise displacements; FULL adds
    the simple geometric relations and the compound bridging relations.
    """
    tier = tier or model.relation_tier
    if tier not in ("FULL", "REDUCED"):
        raise InvalidArgument(f"unknown tier {tier!r}")
    if len(model.slots) < 1:
        raise InvalidArgument("empty model schema")
    types = [s.primitive_type for s in model.slots]
    n = len(types)
    desc: list[RelationDescriptor] = []

    for i in range(n):
        desc.append(RelationDescriptor("unary", 1, (i,), UNARY_FEATURE_COUNTS[types[i]], "SIMPLE"))
    for i in range(n):
        for j in range(n):
            if i != j:
                desc.append(RelationDescriptor("displacement", 2, (i, j), 3, "SIMPLE"))
    if tier == "FULL":
        points = [i for i in range(n) if types[i] == "point"]
        contours = [i for i in range(n) if types[i] == "contour"]
        regions = [i for i in range(n) if types[i] == "region"]
        for i in points:
            for j in contours:
                desc.append(RelationDescriptor("cover", 2, (i, j), 2, "SIMPLE"))
        for i in points + contours:
            for j in regions:
                desc.append(RelationDescriptor("containment", 2, (i, j), 2, "SIMPLE"))
        for i in contours:
            for j in regions:
                desc.append(RelationDescriptor("ends_in", 2, (i, j), 2, "SIMPLE"))
        pairs = [(i, j) for k, i in enumerate(contours) for j in contours[k + 1 :]]
        for i, j in pairs:
            desc.append(RelationDescriptor("continuity", 2, (i, j), 2, "SIMPLE"))
        for i, j in pairs:
            desc.append(RelationDescriptor("parallelism", 2, (i, j), 2, "SIMPLE"))
        for i, j in pairs:
            desc.append(RelationDescriptor("bridging", 2, (i, j), 2, "COMPOUND"))
        for i, j in pairs:
            for k in regions:
                desc.append(RelationDescriptor("bridging_corridor", 3, (i, j, k), 2, "COMPOUND"))
    return RelationSchema(tuple(desc))


class RelationContext:
    """Per-image evaluation context with memoized relation computations.

    Candidate primitives recur across many assignments of one image; caching
    by value makes vector assembly cost scale with the candidate pool, not
    with the number of assignments scored.
    """

    def __init__(self, image: LocalRegionImage, edges: EdgeMap | None):
        self.image = image
        self.edges = edges
        self._cache: dict = {}

    def evaluate(self, name: str, prims: tuple[Primitive, ...]) -> tuple[float, ...]:
        key = (name, prims)
        try:
            return self._cache[key]
        except (KeyError, TypeError):
            pass
        out = self._evaluate(name, prims)
        try:
            self._cache[key] = out
        except TypeError:
            pass
        return out

    def _evaluate(self, name: str, prims: tuple[Primitive, ...]) -> tuple[float, ...]:
        if name == "unary":
            return tuple(unary_features(prims[0], self.image))
        if name == "displacement":
            return rel_displacement(prims[0], prims[1])
        if name == "cover":
            return rel_cover(prims[0], prims[1])
        if name == "containment":
            return rel_containment(prims[0], prims[1])
        if name == "ends_in":
            return rel_ends_in(prims[0], prims[1])
        if name == "continuity":
            return rel_continuity(prims[0], prims[1])
        if name == "parallelism":
            return rel_parallelism(prims[0], prims[1])
        if name == "bridging":
            if self.edges is None:
                raise RuntimeError("bridging needs an edge map")
            return rel_bridging(prims[0], prims[1], self.edges)
        if name == "bridging_corridor":
            if self.edges is None:
                raise RuntimeError("bridging needs an edge map")
            return rel_bridging(prims[0], prims[1], self.edges, corridor=prims[2])
        raise RuntimeError(f"unknown relation {name!r}")


def compute_relation_vector(
    assignment: Assignment,
    image: LocalRegionImage,
    edges: EdgeMap | None,
    model: ModelSchema,
    schema: RelationSchema,
    context: RelationContext | None = None,
) -> np.ndarray:
    """Evaluate every descriptor in schema order into a (value, validity) vector.

    Descriptors whose geometry is degenerate emit zeros with validity 0; all
    entries are finite.
    """
    check_assignment(assignment, model, require_complete=True)
    ctx = context if context is not None else RelationContext(image, edges)
    slot_ids = model.slot_ids()
    out = np.zeros(schema.total_length, dtype=np.float64)
    pos = 0
    for d in schema.descriptors:
        prims = tuple(assignment.bindings[slot_ids[i]] for i in d.slot_indices)
        try:
            values = ctx.evaluate(d.name, prims)
            valid = 1.0
        except (DegenerateGeometry, InvalidArgument):
            values = (0.0,) * d.feature_count
            valid = 0.0
        if len(values) != d.feature_count:
            raise InvalidArgument(f"descriptor {d.name} emitted {len(values)} features")
        for v in values:
            out[pos] = v if np.isfinite(v) else 0.0
            out[pos + 1] = valid if np.isfinite(v) else 0.0
            pos += 2
    return out

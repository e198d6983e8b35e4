"""Geometric primitive types (points, contours, regions) and measurements on them.

All coordinates above the raster layer are image-relative, normalized to
[0,1]^2 (pixel/width, pixel/height), so downstream features do not depend on
crop resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateGeometry, InvalidArgument

# Number of arc-length-equispaced samples cached on every contour; shared by
# relation features and evaluation.
CANONICAL_SAMPLES = 20

POINT_KINDS = ("high-curvature", "intensity-extremum", "generic")


@dataclass(frozen=True)
class LocalRegionImage:
    """A small grayscale crop: the unit of processing."""

    width: int
    height: int
    intensities: np.ndarray  # shape (height, width), values in [0,1]
    id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64).reshape(self.height, self.width)
        object.__setattr__(self, "intensities", arr)
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgument("image dimensions must be positive")
        if arr.size != self.width * self.height:
            raise InvalidArgument("intensity count must equal width*height")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise InvalidArgument("intensities must lie in [0,1]")


@dataclass(frozen=True)
class PointPrimitive:
    position: tuple[float, float]
    kind: str = "generic"
    strength: float = 0.0

    def __post_init__(self):
        x, y = self.position
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise InvalidArgument(f"point position {self.position} outside [0,1]^2")
        if self.kind not in POINT_KINDS:
            raise InvalidArgument(f"unknown point kind {self.kind!r}")
        if self.strength < 0:
            raise InvalidArgument("strength must be >= 0")
        object.__setattr__(self, "position", (float(x), float(y)))


@dataclass(frozen=True)
class ContourPrimitive:
    vertices: tuple[tuple[float, float], ...]
    closed: bool = False

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 2:
            raise InvalidArgument("contour needs >= 2 vertices")
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise InvalidArgument("consecutive contour vertices must be distinct")
        object.__setattr__(self, "vertices", verts)
        if self.arc_length <= 0:
            raise DegenerateGeometry("contour has zero arc length")

    @cached_property
    def _chain(self) -> np.ndarray:
        pts = np.asarray(self.vertices, dtype=np.float64)
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return pts

    @cached_property
    def arc_length(self) -> float:
        seg = np.diff(self._chain, axis=0)
        return float(np.sqrt((seg**2).sum(axis=1)).sum())

    @cached_property
    def canonical_samples(self) -> np.ndarray:
        """Exactly CANONICAL_SAMPLES arc-length-equispaced points."""
        return resample_contour(self, CANONICAL_SAMPLES)


@dataclass(frozen=True)
class RegionPrimitive:
    boundary: tuple[tuple[float, float], ...]

    def __post_init__(self):
        poly = tuple((float(x), float(y)) for x, y in self.boundary)
        if len(poly) < 3:
            raise InvalidArgument("region boundary needs >= 3 vertices")
        object.__setattr__(self, "boundary", poly)
        if _polygon_self_intersects(np.asarray(poly)):
            raise DegenerateGeometry("region boundary self-intersects")
        # computing these validates non-degeneracy
        self.centroid, self.area  # noqa: B018

    @cached_property
    def _poly(self) -> np.ndarray:
        return np.asarray(self.boundary, dtype=np.float64)

    @cached_property
    def centroid(self) -> tuple[float, float]:
        c, _ = _polygon_centroid_area(self._poly)
        return c

    @cached_property
    def area(self) -> float:
        _, a = _polygon_centroid_area(self._poly)
        return a


Primitive = PointPrimitive | ContourPrimitive | RegionPrimitive

PRIMITIVE_TYPES = {"point": PointPrimitive, "contour": ContourPrimitive, "region": RegionPrimitive}


def primitive_type_name(p: Primitive) -> str:
    if isinstance(p, PointPrimitive):
        return "point"
    if isinstance(p, ContourPrimitive):
        return "contour"
    if isinstance(p, RegionPrimitive):
        return "region"
    raise InvalidArgument(f"not a primitive: {p!r}")


# ---------------------------------------------------------------------------
# contour operations


def resample_contour(contour: ContourPrimitive, k: int) -> np.ndarray:
    """Resample to k points at equal arc-length spacing.

    Open contours place points at i*L/(k-1) so endpoints are preserved; closed
    contours place them at i*L/k starting from the first vertex.
    """
    if k < 2:
        raise InvalidArgument("need k >= 2 samples")
    chain = contour._chain
    seg = np.diff(chain, axis=0)
    seg_len = np.sqrt((seg**2).sum(axis=1))
    total = seg_len.sum()
    if total <= 0:
        raise DegenerateGeometry("zero-length contour")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    if contour.closed:
        targets = np.arange(k) * total / k
    else:
        targets = np.arange(k) * total / (k - 1)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg_len) - 1)
    frac = (targets - cum[idx]) / seg_len[idx]
    out = chain[idx] + frac[:, None] * seg[idx]
    out[0] = chain[0]
    if not contour.closed:
        out[-1] = chain[-1]
    return out


def curvature_profile(contour: ContourPrimitive) -> np.ndarray:
    """Discrete curvature at each canonical sample.

    Interior samples use the circumscribed-circle estimator over consecutive
    sample triples; endpoints copy the nearest interior value.
    """
    pts = contour.canonical_samples
    if len(pts) < 3:
        raise DegenerateGeometry("need >= 3 samples for curvature")
    a, b, c = pts[:-2], pts[1:-1], pts[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    denom = ab * bc * ca
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0, 2.0 * np.abs(cross) / denom, 0.0)
    return np.concatenate([[kappa[0]], kappa, [kappa[-1]]])


def principal_orientation(contour: ContourPrimitive) -> float:
    """Orientation of the first principal axis of canonical samples, mod pi."""
    pts = contour.canonical_samples
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    if np.allclose(cov, 0.0, atol=1e-18):
        raise DegenerateGeometry("all samples coincident")
    # leading eigenvector of 2x2 symmetric matrix
    angle = 0.5 * np.arctan2(2.0 * cov[0, 1], cov[0, 0] - cov[1, 1])
    return float(angle % np.pi)


def contour_midpoint(contour: ContourPrimitive) -> tuple[float, float]:
    """Point at arc length L/2 (the contour's reference point)."""
    chain = contour._chain
    seg = np.diff(chain, axis=0)
    seg_len = np.sqrt((seg**2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    target = contour.arc_length / 2.0
    i = int(np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(seg_len) - 1))
    frac = (target - cum[i]) / seg_len[i]
    mid = chain[i] + frac * seg[i]
    return (float(mid[0]), float(mid[1]))


def endpoint_tangent(contour: ContourPrimitive, first: bool) -> np.ndarray:
    """Unit tangent at an endpoint, pointing outward (away from the contour)."""
    pts = contour.canonical_samples
    if first:
        v = pts[0] - pts[1]
    else:
        v = pts[-1] - pts[-2]
    n = np.linalg.norm(v)
    if n == 0:
        raise DegenerateGeometry("coincident endpoint samples")
    return v / n


# ---------------------------------------------------------------------------
# polygon operations


def _polygon_centroid_area(poly: np.ndarray) -> tuple[tuple[float, float], float]:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    signed = 0.5 * cross.sum()
    if abs(signed) < 1e-12:
        raise DegenerateGeometry("zero-area polygon")
    cx = ((x + xn) * cross).sum() / (6.0 * signed)
    cy = ((y + yn) * cross).sum() / (6.0 * signed)
    return (float(cx), float(cy)), float(abs(signed))


def centroid_and_area(region: RegionPrimitive) -> tuple[tuple[float, float], float]:
    """Shoelace centroid and absolute area of the region polygon."""
    return _polygon_centroid_area(region._poly)


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0


def _polygon_self_intersects(poly: np.ndarray) -> bool:
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            c, d = poly[j], poly[(j + 1) % n]
            if _segments_properly_intersect(a, b, c, d):
                return True
    return False


def point_in_polygon(pt, poly: np.ndarray) -> bool:
    """Even-odd rule; boundary points count as inside."""
    x, y = float(pt[0]), float(pt[1])
    n = len(poly)
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if _point_segment_distance((x, y), (x1, y1), (x2, y2)) < 1e-12:
            return True
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized even-odd test (boundary not special-cased)."""
    x, y = pts[:, 0:1], pts[:, 1:2]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    cond = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x1 + (y - y1) * (x2 - x1) / np.where(y2 == y1, np.inf, y2 - y1)
    crossings = np.sum(cond & (x < xi), axis=1)
    return crossings % 2 == 1


# ---------------------------------------------------------------------------
# distances


def _point_segment_distance(p, a, b) -> float:
    px, py = p[0] - a[0], p[1] - a[1]
    vx, vy = b[0] - a[0], b[1] - a[1]
    vv = vx * vx + vy * vy
    t = 0.0 if vv == 0 else max(0.0, min(1.0, (px * vx + py * vy) / vv))
    dx, dy = px - t * vx, py - t * vy
    return float(np.hypot(dx, dy))


def points_to_polyline_distances(pts: np.ndarray, chain: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest polyline segment."""
    a, b = chain[:-1], chain[1:]
    v = b - a  # (m,2)
    vv = (v**2).sum(axis=1)  # (m,)
    w = pts[:, None, :] - a[None, :, :]  # (n,m,2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip((w * v[None]).sum(axis=2) / np.where(vv == 0, np.inf, vv), 0.0, 1.0)
    proj = a[None] + t[..., None] * v[None]
    d = np.sqrt(((pts[:, None, :] - proj) ** 2).sum(axis=2))
    return d.min(axis=1)


def _geometry_chain(p: Primitive) -> np.ndarray:
    """Point set / polyline chain representing a primitive's geometry."""
    if isinstance(p, PointPrimitive):
        return np.asarray([p.position], dtype=np.float64)
    if isinstance(p, ContourPrimitive):
        return p._chain
    if isinstance(p, RegionPrimitive):
        return np.vstack([p._poly, p._poly[:1]])
    raise InvalidArgument(f"not a primitive: {p!r}")


def _chain_to_chain_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Min distance between two polylines (dense endpoint-vs-segment checks)."""
    if len(a) == 1 and len(b) == 1:
        return float(np.linalg.norm(a[0] - b[0]))
    best = np.inf
    if len(b) > 1:
        best = min(best, points_to_polyline_distances(a, b).min())
    if len(a) > 1:
        best = min(best, points_to_polyline_distances(b, a).min())
    # proper crossings give distance zero
    if len(a) > 1 and len(b) > 1:
        for i in range(len(a) - 1):
            for j in range(len(b) - 1):
                if _segments_properly_intersect(a[i], a[i + 1], b[j], b[j + 1]):
                    return 0.0
    return float(best)


def min_distance(a: Primitive, b: Primitive) -> float:
    """Minimum Euclidean distance between the two primitives' point sets.

    A region contains its interior: anything lying inside it is at distance 0.
    """
    ca, cb = _geometry_chain(a), _geometry_chain(b)
    d = _chain_to_chain_distance(ca, cb)
    if d > 0:
        if isinstance(a, RegionPrimitive) and point_in_polygon(cb[0], a._poly):
            return 0.0
        if isinstance(b, RegionPrimitive) and point_in_polygon(ca[0], b._poly):
            return 0.0
    return d


def signed_boundary_distance(pt, region: RegionPrimitive) -> float:
    """Distance to the region boundary, positive inside and negative outside."""
    p = np.asarray([pt], dtype=np.float64)
    d = float(points_to_polyline_distances(p, _geometry_chain(region))[0])
    return d if point_in_polygon(pt, region._poly) else -d


def reference_point(p: Primitive) -> tuple[float, float]:
    """Canonical anchor: point position, contour midpoint, region centroid."""
    if isinstance(p, PointPrimitive):
        return p.position
    if isinstance(p, ContourPrimitive):
        return contour_midpoint(p)
    if isinstance(p, RegionPrimitive):
        return p.centroid
    raise InvalidArgument(f"not a primitive: {p!r}")

"""Edge detection and edge-constrained path search.

The edge map is the substrate for two things: the contour "bridging" relation
(can two contour endpoints be linked by a low-cost walk along edge pixels,
optionally confined to a corridor region) and the annotation snap-refinement.

Pixel coordinates are (x, y) with x the column index; arrays are indexed
[y, x]. Normalized coordinates map as norm = pixel / size.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ImageTooSmall, InvalidArgument
from .geometry import LocalRegionImage, RegionPrimitive, points_in_polygon

UNREACHABLE_RATIO = 10.0

_SQRT2 = float(np.sqrt(2.0))
_STEPS = [
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, _SQRT2), (1, -1, _SQRT2), (-1, 1, _SQRT2), (-1, -1, _SQRT2),
]


@dataclass(frozen=True)
class EdgeParams:
    smoothing_sigma: float = 1.0
    high_threshold_percentile: float = 90.0
    low_fraction: float = 0.4
    gap_jump: int = 2
    gap_penalty: float = 4.0
    bridge_ratio_beta: float = 1.8
    snap_radius: float = 5.0

    def __post_init__(self):
        if self.smoothing_sigma <= 0 or self.gap_jump <= 0 or self.gap_penalty <= 0:
            raise InvalidArgument("edge params must be positive")
        if self.bridge_ratio_beta <= 0 or self.snap_radius <= 0:
            raise InvalidArgument("edge params must be positive")
        if not (0.0 < self.low_fraction < 1.0):
            raise InvalidArgument("low_fraction must lie in (0,1)")
        if not (50.0 < self.high_threshold_percentile < 100.0):
            raise InvalidArgument("high_threshold_percentile must lie in (50,100)")


@dataclass(frozen=True)
class EdgeMap:
    width: int
    height: int
    edge_mask: np.ndarray  # (H,W) bool
    gradient_orientation: np.ndarray  # (H,W), in [0,pi), meaningful on edge pixels
    gradient_magnitude: np.ndarray  # (H,W)
    params: EdgeParams

    @cached_property
    def edge_pixels(self) -> np.ndarray:
        """Edge pixel coordinates as (x, y) rows, row-major order."""
        ys, xs = np.nonzero(self.edge_mask)
        return np.column_stack([xs, ys]).astype(np.float64)

    @cached_property
    def _tree(self) -> cKDTree | None:
        if len(self.edge_pixels) == 0:
            return None
        return cKDTree(self.edge_pixels)

    def nearest_edge_pixel(self, pt, max_dist: float) -> tuple[int, int] | None:
        if self._tree is None:
            return None
        d, i = self._tree.query([float(pt[0]), float(pt[1])])
        if d > max_dist:
            return None
        x, y = self.edge_pixels[i]
        return int(x), int(y)

    def contains(self, pt) -> bool:
        return 0 <= pt[0] < self.width and 0 <= pt[1] < self.height


def compute_edge_map(image: LocalRegionImage, params: EdgeParams = EdgeParams()) -> EdgeMap:
    """Canny-style edge map: smooth, gradient, NMS, percentile hysteresis."""
    if image.width < 5 or image.height < 5:
        raise ImageTooSmall(f"image {image.width}x{image.height} below 5x5 minimum")
    smoothed = ndimage.gaussian_filter(image.intensities, params.smoothing_sigma)
    gy, gx = np.gradient(smoothed)
    mag = np.hypot(gx, gy)
    orientation = np.mod(np.arctan2(gy, gx), np.pi)

    nms = _non_maximum_suppression(mag, orientation)

    nonzero = mag[mag > 1e-12]
    if nonzero.size == 0:
        mask = np.zeros_like(mag, dtype=bool)
    else:
        high = float(np.percentile(nonzero, params.high_threshold_percentile))
        low = params.low_fraction * high
        strong = nms >= high
        weak = nms >= low
        labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
        keep = np.zeros(n + 1, dtype=bool)
        keep[np.unique(labels[strong])] = True
        keep[0] = False
        mask = keep[labels]
    return EdgeMap(
        width=image.width,
        height=image.height,
        edge_mask=mask,
        gradient_orientation=orientation,
        gradient_magnitude=mag,
        params=params,
    )


def _non_maximum_suppression(mag: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """Keep gradient magnitude only where it peaks along the gradient direction."""
    h, w = mag.shape
    out = np.zeros_like(mag)
    padded = np.pad(mag, 1, mode="constant")
    # quantize gradient direction into 4 bins; neighbor offsets along gradient
    angle = orientation  # [0, pi)
    bins = ((angle + np.pi / 8) // (np.pi / 4)).astype(int) % 4
    offsets = {0: (1, 0), 1: (1, 1), 2: (0, 1), 3: (-1, 1)}  # (dx, dy) per bin
    for b, (dx, dy) in offsets.items():
        sel = bins == b
        n1 = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        n2 = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        # strict on the forward neighbor so plateau ties yield one-pixel edges
        keep = sel & (mag > n1) & (mag >= n2)
        out[keep] = mag[keep]
    return out


def _corridor_mask(edges: EdgeMap, corridor: RegionPrimitive) -> np.ndarray:
    """Boolean (H,W) mask of pixels whose normalized centers fall inside."""
    xs, ys = np.meshgrid(np.arange(edges.width), np.arange(edges.height))
    pts = np.column_stack([xs.ravel() / edges.width, ys.ravel() / edges.height])
    poly = np.asarray(corridor.boundary, dtype=np.float64)
    return points_in_polygon(pts, poly).reshape(edges.height, edges.width)


def edge_path_cost(
    edges: EdgeMap,
    a: tuple[float, float],
    b: tuple[float, float],
    corridor: RegionPrimitive | None = None,
) -> float | None:
    """Minimum-cost 8-connected walk between the edge pixels nearest a and b.

    Steps cost their Euclidean length; off-edge pixels are allowed only in runs
    of at most gap_jump and each adds gap_penalty. Returns None if unreachable.
    """
    if not edges.contains(a) or not edges.contains(b):
        raise InvalidArgument("path endpoints must lie inside the image")
    start = edges.nearest_edge_pixel(a, edges.params.gap_jump)
    goal = edges.nearest_edge_pixel(b, edges.params.gap_jump)
    if start is None or goal is None:
        return None
    allowed = None
    if corridor is not None:
        allowed = _corridor_mask(edges, corridor)
        if not allowed[start[1], start[0]] or not allowed[goal[1], goal[0]]:
            return None
    return _dijkstra(edges, start, goal, allowed)


def _dijkstra(edges: EdgeMap, start, goal, allowed: np.ndarray | None) -> float | None:
    mask = edges.edge_mask
    w, h = edges.width, edges.height
    gap_jump = edges.params.gap_jump
    gap_penalty = edges.params.gap_penalty
    # state: (x, y, consecutive off-edge run length)
    best: dict[tuple[int, int, int], float] = {}
    s = (start[0], start[1], 0)
    best[s] = 0.0
    heap = [(0.0, s)]
    while heap:
        cost, (x, y, run) = heapq.heappop(heap)
        if cost > best.get((x, y, run), np.inf):
            continue
        if (x, y) == goal:
            return cost
        for dx, dy, step in _STEPS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            if allowed is not None and not allowed[ny, nx]:
                continue
            if mask[ny, nx]:
                nrun, ncost = 0, cost + step
            else:
                nrun = run + 1
                if nrun > gap_jump:
                    continue
                ncost = cost + step + gap_penalty
            key = (nx, ny, nrun)
            if ncost < best.get(key, np.inf):
                best[key] = ncost
                heapq.heappush(heap, (ncost, key))
    return None


def is_bridgeable(
    edges: EdgeMap,
    a: tuple[float, float],
    b: tuple[float, float],
    corridor: RegionPrimitive | None = None,
) -> tuple[bool, float]:
    """Whether a low-cost edge path links a and b, and the cost/distance ratio."""
    euclid = float(np.hypot(b[0] - a[0], b[1] - a[1]))
    if euclid == 0:
        raise InvalidArgument("bridging endpoints must be distinct")
    cost = edge_path_cost(edges, a, b, corridor)
    if cost is None:
        return False, UNREACHABLE_RATIO
    ratio = cost / euclid
    flag = cost <= edges.params.bridge_ratio_beta * euclid
    return flag, ratio


def snap_polyline(
    edges: EdgeMap, polyline: list[tuple[float, float]]
) -> tuple[list[tuple[float, float]], bool]:
    """Snap hand-drawn polyline points onto nearby, consistently oriented edges.

    A point moves to the nearest edge pixel within snap_radius whose gradient
    orientation is within pi/4 of the local polyline normal; others stay put.
    Output is re-ordered monotonically along the original polyline.
    """
    pts = [(float(x), float(y)) for x, y in polyline]
    if len(pts) < 2:
        raise InvalidArgument("polyline needs >= 2 points")
    for p in pts:
        if not edges.contains(p):
            raise InvalidArgument("polyline must lie inside the image")
    if edges._tree is None:
        return pts, False

    arr = np.asarray(pts)
    moved = 0
    out = []
    radius = edges.params.snap_radius
    for i, p in enumerate(pts):
        # local tangent from neighboring polyline points
        j0, j1 = max(0, i - 1), min(len(pts) - 1, i + 1)
        tangent = arr[j1] - arr[j0]
        normal_angle = np.mod(np.arctan2(tangent[1], tangent[0]) + np.pi / 2, np.pi)
        idxs = edges._tree.query_ball_point(list(p), radius)
        chosen, chosen_d = None, np.inf
        for k in idxs:
            ex, ey = edges.edge_pixels[k]
            grad = edges.gradient_orientation[int(ey), int(ex)]
            diff = abs(grad - normal_angle)
            diff = min(diff, np.pi - diff)
            if diff >= np.pi / 4:
                continue
            d = np.hypot(ex - p[0], ey - p[1])
            if d < chosen_d:
                chosen, chosen_d = (float(ex), float(ey)), d
        if chosen is not None:
            out.append(chosen)
            moved += 1  # landing on a valid edge pixel counts, even if in place
        else:
            out.append(p)
    snapped = moved >= 0.5 * len(pts)
    out = _reorder_along(out, arr)
    return out, snapped


def _reorder_along(points, original: np.ndarray) -> list[tuple[float, float]]:
    """Stable sort of points by arc-length parameter of their projection."""
    seg = np.diff(original, axis=0)
    seg_len = np.sqrt((seg**2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    def param(p):
        best_t, best_d = 0.0, np.inf
        for i in range(len(seg)):
            v = seg[i]
            vv = (v**2).sum()
            t = 0.0 if vv == 0 else np.clip(np.dot(np.asarray(p) - original[i], v) / vv, 0, 1)
            proj = original[i] + t * v
            d = np.hypot(p[0] - proj[0], p[1] - proj[1])
            if d < best_d:
                best_d, best_t = d, cum[i] + t * seg_len[i]
        return best_t

    order = sorted(range(len(points)), key=lambda i: (param(points[i]), i))
    return [points[i] for i in order]

"""Bottom-up extraction of candidate primitives from a novel image.

The pool feeds the interpretation search: corner and intensity-extremum
points, linked-and-split edge chains as contours, and thresholded components
plus fixed grid windows as regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .edgemap import EdgeMap
from .errors import DegenerateGeometry, ImageTooSmall, InvalidArgument
from .geometry import (
    ContourPrimitive,
    LocalRegionImage,
    PointPrimitive,
    RegionPrimitive,
)

MIN_CHAIN_PIXELS = 8
CORNER_SPLIT_WINDOW = 5
CORNER_SPLIT_ANGLE = np.pi / 4
SIMPLIFY_TOLERANCE_PX = 1.0


@dataclass(frozen=True)
class CandidateParams:
    max_points_per_kind: int = 30
    max_contours: int = 40
    max_regions: int = 20

    def __post_init__(self):
        if min(self.max_points_per_kind, self.max_contours, self.max_regions) < 1:
            raise InvalidArgument("candidate caps must be positive")


@dataclass
class CandidatePool:
    points: list[PointPrimitive]
    contours: list[ContourPrimitive]
    regions: list[RegionPrimitive]
    source_image_id: str = ""


def build_candidate_pool(
    image: LocalRegionImage, edges: EdgeMap, params: CandidateParams = CandidateParams()
) -> CandidatePool:
    return CandidatePool(
        points=detect_point_candidates(image, edges, params),
        contours=detect_contour_candidates(edges, params),
        regions=detect_region_candidates(image, params),
        source_image_id=image.id,
    )


# ---------------------------------------------------------------------------
# points


def detect_point_candidates(
    image: LocalRegionImage, edges: EdgeMap, params: CandidateParams = CandidateParams()
) -> list[PointPrimitive]:
    """Harris-style corner maxima plus smoothed intensity extrema."""
    if image.width < 5 or image.height < 5:
        raise ImageTooSmall("point detection needs at least 5x5 pixels")
    out: list[PointPrimitive] = []
    out.extend(_corner_points(image, params.max_points_per_kind))
    out.extend(_extremum_points(image, params.max_points_per_kind))
    return out


def _local_maxima(resp: np.ndarray) -> np.ndarray:
    footprint = np.ones((3, 3), dtype=bool)
    return (resp == ndimage.maximum_filter(resp, footprint=footprint)) & (resp > 0)


def _top_points(resp: np.ndarray, mask: np.ndarray, image, kind: str, cap: int):
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return []
    strengths = resp[ys, xs]
    order = sorted(range(len(xs)), key=lambda i: (-strengths[i], xs[i], ys[i]))[:cap]
    return [
        PointPrimitive(
            position=(xs[i] / image.width, ys[i] / image.height),
            kind=kind,
            strength=float(strengths[i]),
        )
        for i in order
    ]


def _corner_points(image: LocalRegionImage, cap: int):
    smoothed = ndimage.gaussian_filter(image.intensities, 1.0)
    gy, gx = np.gradient(smoothed)
    ixx = ndimage.gaussian_filter(gx * gx, 1.5)
    iyy = ndimage.gaussian_filter(gy * gy, 1.5)
    ixy = ndimage.gaussian_filter(gx * gy, 1.5)
    resp = ixx * iyy - ixy**2 - 0.05 * (ixx + iyy) ** 2
    resp[resp < 1e-9] = 0.0
    return _top_points(resp, _local_maxima(resp), image, "high-curvature", cap)


def _extremum_points(image: LocalRegionImage, cap: int):
    # difference-of-Gaussians isolates blob-like extrema from the background
    dog = ndimage.gaussian_filter(image.intensities, 2.0) - ndimage.gaussian_filter(
        image.intensities, 6.0
    )
    out = []
    for signed in (dog, -dog):
        resp = signed.copy()
        resp[resp < 0.02] = 0.0
        out.extend(_top_points(resp, _local_maxima(resp), image, "intensity-extremum", cap))
    out.sort(key=lambda p: (-p.strength, p.position))
    return out[:cap]


# ---------------------------------------------------------------------------
# contours


def detect_contour_candidates(
    edges: EdgeMap, params: CandidateParams = CandidateParams()
) -> list[ContourPrimitive]:
    """Link edge pixels into chains, split at corners, rank by saliency.

    Smooth continuations across junctions and small gaps are re-merged so a
    long arc fragmented by crossing strokes is still offered whole.
    """
    chains = _trace_chains(edges.edge_mask)
    pieces: list[np.ndarray] = []
    for chain in chains:
        parts = _split_at_corners(chain)
        pieces.extend(parts)
        if len(parts) > 1:  # keep the unsplit arc as a candidate too
            pieces.append(chain)
    pieces = pieces + _merge_continuations(pieces)
    pieces = pieces + _join_touching(pieces)
    scored = []
    for piece in pieces:
        length = _chain_length(piece)
        if length < MIN_CHAIN_PIXELS:
            continue
        mags = edges.gradient_magnitude[piece[:, 1], piece[:, 0]]
        scored.append((length * float(mags.mean()), piece))
    scored.sort(key=lambda t: (-t[0], t[1][0, 0], t[1][0, 1]))
    # near-duplicate shapes (re-traces of the same stroke side, overlapping
    # merges) would crowd the cap; keep only shapes that differ materially
    kept: list[tuple[float, np.ndarray]] = []
    sigs: list[np.ndarray] = []
    for score, piece in scored:
        if len(kept) >= params.max_contours:
            break
        sig = _shape_signature(piece)
        dup = any(
            min(
                float(np.linalg.norm(sig - other, axis=1).mean()),
                float(np.linalg.norm(sig - other[::-1], axis=1).mean()),
            )
            <= DEDUP_DISTANCE_PX
            for other in sigs
        )
        if dup:
            continue
        kept.append((score, piece))
        sigs.append(sig)
    out = []
    for _, piece in kept:
        smoothed = _smooth_chain(piece.astype(np.float64))
        # smoothing can overshoot a border pixel by float epsilon
        verts = [
            (min(max(x / edges.width, 0.0), 1.0), min(max(y / edges.height, 0.0), 1.0))
            for x, y in smoothed
        ]
        verts = [v for i, v in enumerate(verts) if i == 0 or v != verts[i - 1]]
        if len(verts) < 2:
            continue
        try:
            out.append(ContourPrimitive(vertices=tuple(verts), closed=False))
        except (DegenerateGeometry, InvalidArgument):
            continue
    return out


def _trace_chains(mask: np.ndarray) -> list[np.ndarray]:
    """Walk 8-connected edge pixels into ordered chains, deterministically."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    pixels = set(zip(xs.tolist(), ys.tolist()))
    offsets = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]

    def neighbors(p):
        return [(p[0] + dx, p[1] + dy) for dx, dy in offsets if (p[0] + dx, p[1] + dy) in pixels]

    degree = {p: len(neighbors(p)) for p in pixels}
    visited: set = set()
    chains = []

    def _extend(chain):
        # direction over the last few pixels, so junction clutter does not
        # deflect the walk; refuse near-reversals onto a parallel line
        while True:
            cur = chain[-1]
            cand = [q for q in neighbors(cur) if q not in visited]
            if not cand:
                return
            k = min(4, len(chain) - 1)
            if k > 0:
                prev_dir = (cur[0] - chain[-1 - k][0], cur[1] - chain[-1 - k][1])
                pn = np.hypot(*prev_dir)

                def turn(q):
                    d = (q[0] - cur[0], q[1] - cur[1])
                    return -(d[0] * prev_dir[0] + d[1] * prev_dir[1]) / (np.hypot(*d) * pn)

                cand.sort(key=lambda q: (turn(q), q))
                if turn(cand[0]) > 0.05:
                    return
            else:
                cand.sort()
            nxt = cand[0]
            chain.append(nxt)
            visited.add(nxt)

    def walk(start):
        visited.add(start)
        fwd = [start]
        _extend(fwd)
        bwd = [start]
        _extend(bwd)
        return bwd[:0:-1] + fwd

    # endpoints first, then remaining pixels (cycles), in sorted order
    endpoints = sorted(p for p in pixels if degree[p] <= 1)
    rest = sorted(pixels)
    for start in endpoints + rest:
        if start in visited:
            continue
        chain = walk(start)
        if len(chain) >= 2:
            chains.append(np.asarray(chain))
    return chains


def _chain_length(chain: np.ndarray) -> float:
    if len(chain) < 2:
        return 0.0
    return float(np.sqrt((np.diff(chain.astype(float), axis=0) ** 2).sum(axis=1)).sum())


def _split_at_corners(chain: np.ndarray) -> list[np.ndarray]:
    """Split where the turning angle over a short window exceeds pi/4."""
    n = len(chain)
    w = CORNER_SPLIT_WINDOW
    if n < 2 * w + 1:
        return [chain]
    cut = []
    pts = chain.astype(float)
    for i in range(w, n - w):
        v1 = pts[i] - pts[i - w]
        v2 = pts[i + w] - pts[i]
        n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
        if n1 == 0 or n2 == 0:
            continue
        ang = np.arccos(np.clip(np.dot(v1, v2) / (n1 * n2), -1, 1))
        if ang > CORNER_SPLIT_ANGLE:
            cut.append((i, ang))
    # keep only local-max turning positions, separated by >= w
    cut.sort(key=lambda t: -t[1])
    chosen: list[int] = []
    for i, _ in cut:
        if all(abs(i - j) >= w for j in chosen):
            chosen.append(i)
    if not chosen:
        return [chain]
    chosen.sort()
    pieces = []
    prev = 0
    for i in chosen:
        pieces.append(chain[prev : i + 1])
        prev = i
    pieces.append(chain[prev:])
    return [p for p in pieces if len(p) >= 2]


MERGE_GAP_PX = 5.0
MERGE_ANGLE = np.pi / 5


def _end_dir(chain: np.ndarray, first: bool) -> np.ndarray:
    k = min(5, len(chain) - 1)
    v = (chain[0] - chain[k]) if first else (chain[-1] - chain[-1 - k])
    v = v.astype(float)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _merge_continuations(pieces: list[np.ndarray]) -> list[np.ndarray]:
    """Greedily concatenate chains whose endpoints continue each other."""
    chains = [p.copy() for p in pieces if len(p) >= 2]
    merged_flags = [False] * len(chains)
    while True:
        n = len(chains)
        if n < 2:
            break
        # orientation o=1 means the chain is traversed reversed; precompute the
        # tail point / outgoing direction and head point / incoming direction
        # for both orientations of every chain, then score all joins at once
        tail_pt = np.empty((n, 2, 2))
        tail_dir = np.empty((n, 2, 2))
        head_pt = np.empty((n, 2, 2))
        head_dir = np.empty((n, 2, 2))
        for i, c in enumerate(chains):
            d0 = _end_dir(c, first=True)
            d1 = _end_dir(c, first=False)
            tail_pt[i, 0], tail_pt[i, 1] = c[-1], c[0]
            tail_dir[i, 0], tail_dir[i, 1] = d1, d0
            head_pt[i, 0], head_pt[i, 1] = c[0], c[-1]
            head_dir[i, 0], head_dir[i, 1] = -d0, -d1
        t_pt = tail_pt.reshape(2 * n, 2)
        t_dir = tail_dir.reshape(2 * n, 2)
        h_pt = head_pt.reshape(2 * n, 2)
        h_dir = head_dir.reshape(2 * n, 2)
        gap = np.linalg.norm(t_pt[:, None, :] - h_pt[None, :, :], axis=2)
        ang = np.arccos(np.clip(t_dir @ h_dir.T, -1.0, 1.0))
        cost = gap + 5.0 * ang
        ia = np.repeat(np.arange(n), 2)
        ok = (gap <= MERGE_GAP_PX) & (ang <= MERGE_ANGLE) & (ia[:, None] < ia[None, :])
        if not ok.any():
            break
        cost[~ok] = np.inf
        fa, fb = np.unravel_index(int(np.argmin(cost)), cost.shape)
        i, rev_i = int(fa) // 2, bool(fa % 2)
        j, rev_j = int(fb) // 2, bool(fb % 2)
        a = chains[i][::-1] if rev_i else chains[i]
        b = chains[j][::-1] if rev_j else chains[j]
        if tuple(a[-1]) == tuple(b[0]):
            b = b[1:]
        joined = np.vstack([a, b])
        chains = [c for k, c in enumerate(chains) if k not in (i, j)] + [joined]
        merged_flags = [f for k, f in enumerate(merged_flags) if k not in (i, j)] + [True]
    return [c for c, f in zip(chains, merged_flags) if f]


DEDUP_DISTANCE_PX = 2.0


def _shape_signature(chain: np.ndarray, k: int = 8) -> np.ndarray:
    """Arc-length resampling to k pixel-space points, for duplicate checks."""
    pts = chain.astype(float)
    seg = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return np.repeat(pts[:1], k, axis=0)
    targets = np.linspace(0.0, total, k)
    xs = np.interp(targets, cum, pts[:, 0])
    ys = np.interp(targets, cum, pts[:, 1])
    return np.column_stack([xs, ys])


TOUCH_GAP_PX = 2.0


def _join_touching(pieces: list[np.ndarray]) -> list[np.ndarray]:
    """Join chain pairs whose endpoints nearly coincide, at any turn angle.

    Tracing breaks a curve wherever it crosses a junction or folds back on
    itself sharply; the pieces then abut within a pixel or two. Each such
    pair is offered joined as an extra candidate — the originals stay.
    """
    n = len(pieces)
    if n < 2:
        return []
    ends = np.empty((n, 2, 2))
    for i, c in enumerate(pieces):
        ends[i, 0], ends[i, 1] = c[0], c[-1]
    flat = ends.reshape(2 * n, 2)
    gap = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=2)
    idx = np.repeat(np.arange(n), 2)
    close = (gap <= TOUCH_GAP_PX) & (idx[:, None] < idx[None, :])
    joined: list[np.ndarray] = []
    seen_pairs: set[tuple[int, int]] = set()
    cand = np.argwhere(close)
    cand = cand[np.argsort(gap[cand[:, 0], cand[:, 1]], kind="stable")]
    for fa, fb in cand:
        i, ai = int(fa) // 2, int(fa) % 2
        j, bi = int(fb) // 2, int(fb) % 2
        if (i, j) in seen_pairs:  # one join per chain pair, closest ends first
            continue
        seen_pairs.add((i, j))
        a, b = pieces[i], pieces[j]
        # overlapping chains are extension variants of each other, not two
        # halves of a broken part; joining them only multiplies duplicates
        sa = set(map(tuple, a))
        if sum(tuple(p) in sa for p in b) > 3:
            continue
        left = a[::-1] if ai == 0 else a  # put the touching end of a last
        right = b if bi == 0 else b[::-1]
        if tuple(left[-1]) == tuple(right[0]):
            right = right[1:]
        if len(right) == 0:
            continue
        joined.append(np.vstack([left, right]))
    return joined


SMOOTH_SPACING_PX = 2.0
SMOOTH_WINDOW = 9


def _smooth_chain(chain: np.ndarray) -> np.ndarray:
    """Resample at 1px arc-length spacing, box-filter out pixel quantization,
    then thin to ~2px vertex spacing; endpoints are preserved."""
    pts = chain.astype(np.float64)
    seg = np.sqrt((np.diff(pts, axis=0) ** 2).sum(axis=1))
    total = seg.sum()
    if total <= 0 or len(pts) < 3:
        return pts
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(round(total)) + 1, 3)
    t = np.linspace(0.0, total, n)
    dense = np.column_stack([np.interp(t, cum, pts[:, 0]), np.interp(t, cum, pts[:, 1])])
    sm = ndimage.uniform_filter1d(dense, size=SMOOTH_WINDOW, axis=0, mode="nearest")
    sm[0], sm[-1] = dense[0], dense[-1]
    step = max(int(round(SMOOTH_SPACING_PX)), 1)
    keep = np.arange(0, n, step)
    if keep[-1] != n - 1:
        keep = np.append(keep, n - 1)
    return sm[keep]


def douglas_peucker(pts: np.ndarray, tol: float) -> np.ndarray:
    """Classic recursive polyline simplification."""
    if len(pts) < 3:
        return pts
    a, b = pts[0], pts[-1]
    ab = b - a
    norm = np.linalg.norm(ab)
    if norm == 0:
        d = np.linalg.norm(pts - a, axis=1)
    else:
        rel = pts - a
        d = np.abs(ab[0] * rel[:, 1] - ab[1] * rel[:, 0]) / norm
    i = int(np.argmax(d))
    if d[i] <= tol:
        return np.vstack([a, b])
    left = douglas_peucker(pts[: i + 1], tol)
    right = douglas_peucker(pts[i:], tol)
    return np.vstack([left[:-1], right])


# ---------------------------------------------------------------------------
# regions


def detect_region_candidates(
    image: LocalRegionImage, params: CandidateParams = CandidateParams()
) -> list[RegionPrimitive]:
    """Quantile-threshold components plus a fixed grid of windows."""
    h, w = image.height, image.width
    smoothed = ndimage.gaussian_filter(image.intensities, 2.0)
    total = h * w
    candidates: list[tuple[float, np.ndarray, np.ndarray]] = []  # (contrast, mask, poly_px)
    for q in (0.2, 0.4, 0.6, 0.8):
        thr = float(np.quantile(smoothed, q))
        for mask in (smoothed <= thr, smoothed > thr):
            labels, n = ndimage.label(mask)
            for lab in range(1, n + 1):
                comp = labels == lab
                area = int(comp.sum())
                if not (0.01 * total <= area <= 0.60 * total):
                    continue
                poly = _component_polygon(comp)
                if poly is None:
                    continue
                contrast = _component_contrast(image.intensities, comp)
                candidates.append((contrast, comp, poly))
    candidates.sort(key=lambda t: (-t[0], t[2][0, 0], t[2][0, 1]))

    # the grid windows are never dropped by the contrast cap: they are the
    # coverage guarantee that keeps every slot searchable on any input
    grid = _grid_windows(w, h)
    budget = max(params.max_regions - len(grid), 0)
    picked: list[tuple[np.ndarray, np.ndarray]] = []  # (mask, poly)
    for _, comp, poly in candidates:
        if len(picked) >= budget:
            break
        if any(_mask_iou(comp, m) > 0.8 for m, _ in picked):
            continue
        picked.append((comp, poly))
    for mask, poly in grid:
        if any(_mask_iou(mask, m) > 0.8 for m, _ in picked):
            continue
        picked.append((mask, poly))

    out = []
    for _, poly in picked:
        verts = [(x / w, y / h) for x, y in poly]
        verts = _dedup_ring(verts)
        if len(verts) < 3:
            continue
        try:
            out.append(RegionPrimitive(boundary=tuple(verts)))
        except (DegenerateGeometry, InvalidArgument):
            continue
    return out


def _dedup_ring(verts):
    out = []
    for v in verts:
        if not out or v != out[-1]:
            out.append(v)
    if len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def _component_contrast(intensities: np.ndarray, comp: np.ndarray) -> float:
    ring = ndimage.binary_dilation(comp, iterations=3) & ~comp
    if not ring.any():
        return 0.0
    return float(abs(intensities[comp].mean() - intensities[ring].mean()))


def _mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = int((a & b).sum())
    union = int((a | b).sum())
    return inter / union if union else 0.0


def _grid_windows(w: int, h: int):
    """3x3 grid of half-overlapping square windows covering the image."""
    ww, wh = w / 2.0, h / 2.0
    out = []
    for gy in range(3):
        for gx in range(3):
            x0, y0 = gx * w / 4.0, gy * h / 4.0
            x1, y1 = x0 + ww, y0 + wh
            poly = np.asarray([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
            mask = np.zeros((h, w), dtype=bool)
            mask[int(y0) : int(np.ceil(y1)), int(x0) : int(np.ceil(x1))] = True
            out.append((mask, poly))
    return out


def _component_polygon(comp: np.ndarray) -> np.ndarray | None:
    """Moore-neighbor boundary trace, then Douglas-Peucker simplification."""
    boundary = _moore_trace(comp)
    if boundary is None or len(boundary) < 4:
        return None
    simplified = douglas_peucker(boundary.astype(float), SIMPLIFY_TOLERANCE_PX)
    # drop duplicate closing vertex; polygon is implicitly closed
    if len(simplified) > 1 and np.array_equal(simplified[0], simplified[-1]):
        simplified = simplified[:-1]
    if len(simplified) < 3:
        return None
    return simplified


_MOORE = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]


def _moore_trace(comp: np.ndarray) -> np.ndarray | None:
    h, w = comp.shape
    ys, xs = np.nonzero(comp)
    if len(xs) == 0:
        return None
    # start at topmost-leftmost boundary pixel
    start = (int(xs[np.lexsort((xs, ys))[0]]), int(ys[np.lexsort((xs, ys))[0]]))

    def inside(p):
        return 0 <= p[0] < w and 0 <= p[1] < h and comp[p[1], p[0]]

    boundary = [start]
    backtrack = 0  # index into _MOORE pointing at the pixel we came from
    cur = start
    for _ in range(8 * len(xs) + 8):
        found = False
        for k in range(8):
            idx = (backtrack + k) % 8
            dx, dy = _MOORE[idx]
            nxt = (cur[0] + dx, cur[1] + dy)
            if inside(nxt):
                boundary.append(nxt)
                backtrack = (idx + 5) % 8
                cur = nxt
                found = True
                break
        if not found:  # isolated pixel
            break
        if cur == start and len(boundary) > 2:
            break
    if boundary[-1] == start:
        boundary.pop()
    if len(boundary) < 3:
        return None
    return np.asarray(boundary, dtype=np.int64)

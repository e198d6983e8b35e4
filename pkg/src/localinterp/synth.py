"""Procedural ground-truthed scenes: a schematic head-like template with two
boundary contours, two ears, an eye point, a nostril point, and two regions,
rendered with jitter, noise, and optional occlusion gaps. Also houses the
exhaustive-search oracle used to validate the beam search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, InvalidArgument, NoInterpretation
from .geometry import (
    ContourPrimitive,
    LocalRegionImage,
    PointPrimitive,
    Primitive,
    RegionPrimitive,
    _polygon_self_intersects,
    points_in_polygon,
    points_to_polyline_distances,
)
from .candidates import detect_point_candidates
from .edgemap import EdgeParams, compute_edge_map
from .pipeline import ImageContext, TrainedModel, _gate_passing_candidates
from .relations import compute_relation_vector
from .forest import predict_batch
from .schema import Assignment, ModelSchema, Slot

BACKGROUND = 0.72
STROKE = 0.08
REGION_FILL = 0.88
EYE_VALUE = 0.05
NOSTRIL_VALUE = 1.0


@dataclass(frozen=True)
class SceneParams:
    crop_size: int = 64
    rotation_jitter: float = 0.2  # radians, +/-
    scale_range: tuple[float, float] = (0.8, 1.25)
    translation_jitter: float = 0.1  # normalized, +/-
    noise_sigma: float = 0.03
    occlusion_probability: float = 0.1

    def __post_init__(self):
        if self.crop_size < 32:
            raise InvalidArgument("crop_size must be >= 32")
        if self.scale_range[0] > self.scale_range[1] or self.scale_range[0] <= 0:
            raise InvalidArgument("invalid scale range")


def head8_schema(tier: str = "FULL") -> ModelSchema:
    return ModelSchema(
        class_name="head8",
        slots=(
            Slot("upper_head", "upper head contour", "contour"),
            Slot("lower_head", "lower head contour", "contour"),
            Slot("ear_left", "left ear contour", "contour"),
            Slot("ear_right", "right ear contour", "contour"),
            Slot("eye", "eye point", "point"),
            Slot("nostril", "nostril point", "point"),
            Slot("mouth", "mouth region", "region"),
            Slot("cheek", "cheek region", "region"),
        ),
        relation_tier=tier,
    )


def _octagon(cx, cy, rx, ry):
    ang = np.linspace(0, 2 * np.pi, 9)[:-1] + np.pi / 8
    return [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in ang]


# template control geometry in normalized coordinates
_TEMPLATE: dict[str, tuple[str, object]] = {
    "upper_head": (
        "contour",
        [(0.12, 0.55), (0.20, 0.40), (0.35, 0.33), (0.50, 0.31),
         (0.65, 0.33), (0.80, 0.40), (0.88, 0.55)],
    ),
    "lower_head": (
        "contour",
        [(0.12, 0.585), (0.25, 0.72), (0.50, 0.80), (0.75, 0.72), (0.88, 0.585)],
    ),
    "ear_left": (
        "contour",
        [(0.25, 0.28), (0.265, 0.14), (0.315, 0.08), (0.375, 0.09), (0.41, 0.16), (0.42, 0.27)],
    ),
    "ear_right": (
        "contour",
        [(0.58, 0.27), (0.59, 0.16), (0.625, 0.09), (0.685, 0.08), (0.735, 0.14), (0.75, 0.28)],
    ),
    "eye": ("point", (0.40, 0.45)),
    "nostril": ("point", (0.73, 0.43)),
    "mouth": ("region", _octagon(0.53, 0.67, 0.13, 0.09)),
    "cheek": ("region", _octagon(0.24, 0.45, 0.08, 0.08)),
}


@dataclass
class SyntheticScene:
    image: LocalRegionImage
    annotation: Assignment
    params_used: SceneParams


def _transform(pts: np.ndarray, angle: float, scale: float, shift: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.asarray([[c, -s], [s, c]])
    return (pts - 0.5) @ (scale * rot.T) + 0.5 + shift


def _sample_jitter(params: SceneParams, rng: np.random.Generator):
    """Rejection-sample a pose that keeps every template point inside the crop."""
    all_pts = []
    for kind, geom in _TEMPLATE.values():
        all_pts.extend([geom] if kind == "point" else list(geom))
    all_pts = np.asarray(all_pts, dtype=np.float64)
    lo, hi = params.scale_range
    for attempt in range(200):
        angle = rng.uniform(-params.rotation_jitter, params.rotation_jitter)
        scale = rng.uniform(lo, hi)
        shift = rng.uniform(-params.translation_jitter, params.translation_jitter, size=2)
        if attempt > 100:
            scale = min(scale, 1.0)  # give up on large scales if cramped
        out = _transform(all_pts, angle, scale, shift)
        if out.min() >= 0.03 and out.max() <= 0.97:
            return angle, scale, shift
    return 0.0, 1.0, np.zeros(2)


def _densify(pts: np.ndarray, spacing: float = 0.03) -> np.ndarray:
    """Chaikin-smooth a control polyline and resample at even arc length.

    Rendered strokes and their labels share this dense smooth chain, so the
    annotation describes exactly the curve that appears in the image.
    """
    p = pts.astype(np.float64)
    for _ in range(2):
        if len(p) < 3:
            break
        q = []
        for i in range(len(p) - 1):
            a, b = p[i], p[i + 1]
            q.append(0.75 * a + 0.25 * b)
            q.append(0.25 * a + 0.75 * b)
        p = np.vstack([p[:1], *q, p[-1:]])
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0:
        return p
    k = max(int(np.ceil(total / spacing)) + 1, 2)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, total, k)
    return np.column_stack([np.interp(t, cum, p[:, 0]), np.interp(t, cum, p[:, 1])])


def _base_canvas(n: int) -> np.ndarray:
    """Background with a gentle bright-rim vignette.

    The rim owns the top intensity quantile, so quantile-threshold region
    detectors see interior blobs as clean separate components instead of
    blobs merged into near-threshold noise networks.
    """
    yy, xx = np.mgrid[0:n, 0:n] / max(n - 1, 1)
    rad2 = (xx - 0.5) ** 2 + (yy - 0.5) ** 2
    return BACKGROUND + 0.20 * (rad2 - 0.25)


def _raster_grid(n: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(n), np.arange(n))
    return np.column_stack([xs.ravel() / n, ys.ravel() / n]).astype(np.float64)


def _paint_stroke(canvas: np.ndarray, chain: np.ndarray, n: int, value: float,
                  width: float = 1.5, fade: float = 5.0):
    """One-sided shaded stripe with a sharp step at the path and a slow fade.

    The intensity step sits exactly on the labeled curve, so the image edge a
    detector finds coincides with the annotation; the far side ramps out too
    gently to register as a second parallel edge.
    """
    grid = _raster_grid(n)
    a, b = chain[:-1], chain[1:]
    ab = b - a
    L2 = (ab**2).sum(axis=1)
    L2[L2 == 0] = 1e-12
    diff = grid[:, None, :] - a[None, :, :]
    t = np.clip((diff * ab[None]).sum(-1) / L2[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * ab[None]
    d = np.linalg.norm(grid[:, None] - proj, axis=-1)
    j = d.argmin(axis=1)
    gi = np.arange(len(grid))
    dmin = d[gi, j] * n  # pixel units
    cross = ab[j][:, 0] * (grid[:, 1] - a[j][:, 1]) - ab[j][:, 1] * (grid[:, 0] - a[j][:, 0])
    s = np.where(cross >= 0, dmin, -dmin)
    # shade the convex side: the outward offset curve cannot self-intersect,
    # so tightly curved arcs stay outlines instead of filling solid
    dirs = ab / np.sqrt(L2)[:, None]
    turn = dirs[:-1, 0] * dirs[1:, 1] - dirs[:-1, 1] * dirs[1:, 0]
    if len(dirs) > 1 and float(np.mean(turn)) > 0:
        s = -s
    # monotone exponential tail: gradient is largest at the step itself, so
    # non-max suppression leaves no second ridge on the far side
    tail = np.where(s <= width, 1.0, np.exp(-(s - width) / (0.4 * fade)))
    alpha = (np.clip(s + 0.5, 0.0, 1.0) * tail).reshape(n, n)
    canvas[:] = canvas * (1 - alpha) + value * alpha


def _paint_disk(canvas: np.ndarray, center, radius_px: float, value: float, n: int):
    grid = _raster_grid(n)
    d = np.hypot(grid[:, 0] - center[0], grid[:, 1] - center[1]) * n
    alpha = np.clip(radius_px + 0.5 - d, 0.0, 1.0).reshape(n, n)
    canvas[:] = canvas * (1 - alpha) + value * alpha


def _paint_region(canvas: np.ndarray, poly: np.ndarray, n: int, rng: np.random.Generator):
    grid = _raster_grid(n)
    inside = points_in_polygon(grid, poly).reshape(n, n)
    texture = REGION_FILL + 0.05 * rng.standard_normal(canvas.shape)
    canvas[inside] = np.clip(texture[inside], 0.0, 1.0)


def generate_scene(params: SceneParams, seed: int) -> SyntheticScene:
    """Deterministic jittered rendering of the head template with exact labels."""
    rng = np.random.default_rng(seed)
    angle, scale, shift = _sample_jitter(params, rng)
    n = params.crop_size
    canvas = _base_canvas(n)

    placed: dict[str, tuple[str, np.ndarray]] = {}
    for sid, (kind, geom) in _TEMPLATE.items():
        pts = np.asarray([geom] if kind == "point" else geom, dtype=np.float64)
        # deformable template: each part wanders, turns, rescales, and has its
        # control points perturbed on its own, so part shapes and pairwise
        # angles vary across scenes rather than only the global pose
        wander = 0.06 if kind == "region" else 0.03
        base = _transform(pts, angle, scale, shift)
        for _ in range(30):
            offset = rng.uniform(-wander, wander, size=2)
            part_angle = rng.uniform(-0.12, 0.12)
            part_scale = rng.uniform(0.9, 1.1)
            ctr = base.mean(axis=0)
            c, s = np.cos(part_angle), np.sin(part_angle)
            rot = np.asarray([[c, -s], [s, c]])
            out = (base - ctr) @ (part_scale * rot.T) + ctr + offset
            if len(out) > 1:
                out = out + rng.uniform(-0.012, 0.012, size=out.shape)
            if kind == "contour":
                out = _densify(out)
            if out.min() < 0.015 or out.max() > 0.985:
                continue
            if kind == "region" and _polygon_self_intersects(out):
                continue
            break
        else:
            out = np.clip(base, 0.015, 0.985)
            if kind == "contour":
                out = _densify(out)
        placed[sid] = (kind, out)

    # regions first so strokes and points overlay them
    for sid, (kind, pts) in placed.items():
        if kind == "region":
            _paint_region(canvas, pts, n, rng)
    for sid, (kind, pts) in placed.items():
        if kind == "contour":
            _paint_stroke(canvas, pts, n, STROKE)
    _paint_disk(canvas, placed["eye"][1][0], 2.2 * scale, EYE_VALUE, n)
    _paint_disk(canvas, placed["nostril"][1][0], 1.8 * scale, NOSTRIL_VALUE, n)

    if rng.uniform() < params.occlusion_probability:
        # erase a short gap on a random contour, exercising edge bridging
        contour_ids = [s for s, (k, _) in placed.items() if k == "contour"]
        sid = contour_ids[int(rng.integers(len(contour_ids)))]
        chain = placed[sid][1]
        seg = int(rng.integers(len(chain) - 1))
        t = rng.uniform(0.3, 0.7)
        spot = chain[seg] * (1 - t) + chain[seg + 1] * t
        _paint_disk(canvas, spot, 1.5, BACKGROUND, n)

    canvas = np.clip(canvas + params.noise_sigma * rng.standard_normal(canvas.shape), 0.0, 1.0)

    image_tmp = LocalRegionImage(n, n, canvas, id=f"pos_{seed}")
    detected_points = detect_point_candidates(
        image_tmp, compute_edge_map(image_tmp, EdgeParams())
    )

    def _matched_strength(x: float, y: float) -> float:
        # a labeled point stands in for a detector response; give it the
        # strength of the response it marks so the two stay comparable
        best = 0.0
        for p in detected_points:
            if np.hypot(p.position[0] - x, p.position[1] - y) <= 3.0 / n:
                best = max(best, p.strength)
        return best

    bindings: dict[str, Primitive] = {}
    for sid, (kind, pts) in placed.items():
        if kind == "point":
            x, y = float(pts[0, 0]), float(pts[0, 1])
            bindings[sid] = PointPrimitive(position=(x, y), strength=_matched_strength(x, y))
        elif kind == "contour":
            bindings[sid] = ContourPrimitive(vertices=tuple(map(tuple, pts)), closed=False)
        else:
            bindings[sid] = RegionPrimitive(boundary=tuple(map(tuple, pts)))
    image = image_tmp
    return SyntheticScene(image=image, annotation=Assignment(bindings=bindings), params_used=params)


def generate_negative_image(params: SceneParams, seed: int) -> LocalRegionImage:
    """Shuffled-part scene or pure-texture crop, alternating by seed parity.

    Shuffled scenes reuse the template's stroke inventory under independent
    random placements, so low-order statistics match positives and the
    configuration itself must carry the discrimination.
    """
    rng = np.random.default_rng([seed, 999])
    n = params.crop_size
    if seed % 2 == 0:
        canvas = _base_canvas(n)
        # coherent global transform (as in positive scenes) with independent
        # per-part rotation and offset on top: each part lands in a plausible
        # place but the joint configuration — junctions, tangent continuity,
        # containment — is broken
        g_angle = rng.uniform(-params.rotation_jitter, params.rotation_jitter)
        g_scale = rng.uniform(*params.scale_range)
        g_trans = rng.uniform(-params.translation_jitter, params.translation_jitter, size=2)
        gc, gs = np.cos(g_angle), np.sin(g_angle)
        g_rot = np.asarray([[gc, -gs], [gs, gc]])

        def _place(pts: np.ndarray) -> np.ndarray:
            base = g_scale * ((pts - 0.5) @ g_rot.T) + 0.5 + g_trans
            center = base.mean(axis=0)
            local = base - center
            for _ in range(50):
                angle = rng.uniform(-0.5, 0.5)
                pos = center + rng.uniform(-0.06, 0.06, size=2)
                c, s = np.cos(angle), np.sin(angle)
                out = local @ np.asarray([[c, -s], [s, c]]).T + pos
                if out.min() >= 0.03 and out.max() <= 0.97:
                    break
            return out

        for sid, (kind, geom) in _TEMPLATE.items():
            pts = np.asarray([geom] if kind == "point" else geom, dtype=np.float64)
            out = _place(pts)
            if kind == "region":
                _paint_region(canvas, out, n, rng)
        for sid, (kind, geom) in _TEMPLATE.items():
            pts = np.asarray([geom] if kind == "point" else geom, dtype=np.float64)
            out = _place(pts)
            if kind == "contour":
                _paint_stroke(canvas, _densify(out), n, STROKE)
            elif kind == "point":
                value = EYE_VALUE if sid == "eye" else NOSTRIL_VALUE
                radius = 2.2 if sid == "eye" else 1.8
                _paint_disk(canvas, out[0], radius, value, n)
        canvas = np.clip(canvas + params.noise_sigma * rng.standard_normal(canvas.shape), 0, 1)
    else:
        # smooth random texture
        from scipy import ndimage

        field_ = rng.standard_normal((n, n))
        canvas = ndimage.gaussian_filter(field_, 3.0)
        canvas = BACKGROUND + 0.25 * canvas / max(np.abs(canvas).max(), 1e-9)
        canvas = np.clip(canvas + params.noise_sigma * rng.standard_normal((n, n)), 0, 1)
    return LocalRegionImage(n, n, canvas, id=f"neg_{seed}")


def brute_force_interpret(
    image: LocalRegionImage,
    model: TrainedModel,
    max_per_slot: int = 5,
    context: ImageContext | None = None,
) -> tuple[Assignment, float]:
    """Exhaustive enumeration of gate-passing assignments; exact argmax."""
    ctx = context or ImageContext(image, model.edge_params, model.candidate_params)
    gate = model.gate
    schema = model.schema
    per_slot = _gate_passing_candidates(gate, schema, ctx.pool)
    order = sorted(schema.slot_ids(), key=lambda s: (gate.slot_variance[s], s))
    total = 1
    for sid in order:
        if not per_slot[sid]:
            raise NoInterpretation(sid)
        if len(per_slot[sid]) > max_per_slot:
            raise BudgetExceeded(
                f"slot {sid!r} has {len(per_slot[sid])} candidates (cap {max_per_slot})"
            )
        total *= len(per_slot[sid])
        if total > 1_000_000:
            raise BudgetExceeded("combination count exceeds 1e6")

    complete: list[tuple[tuple[int, ...], dict]] = []

    def recurse(depth: int, idx: tuple[int, ...], bindings: dict):
        if depth == len(order):
            complete.append((idx, dict(bindings)))
            return
        sid = order[depth]
        for ci, p in enumerate(per_slot[sid]):
            ok = all(
                gate.passes_pair(bs, sid, bp, p) and gate.passes_pair(sid, bs, p, bp)
                for bs, bp in bindings.items()
            )
            if not ok:
                continue
            bindings[sid] = p
            recurse(depth + 1, idx + (ci,), bindings)
            del bindings[sid]

    recurse(0, (), {})
    if not complete:
        raise NoInterpretation(order[0], "no gate-passing complete assignment")
    X = np.asarray(
        [
            compute_relation_vector(
                Assignment(bindings=b),
                ctx.image,
                ctx.edges,
                schema,
                model.relation_schema,
                ctx.relation_context,
            )
            for _, b in complete
        ]
    )
    scores = predict_batch(model.forest, X)
    ranked = sorted(range(len(complete)), key=lambda i: (-scores[i], complete[i][0]))
    best = ranked[0]
    return Assignment(bindings=complete[best][1], score=float(scores[best])), float(scores[best])


def generate_dataset(
    n_pos: int,
    n_neg: int,
    params: SceneParams,
    seed: int,
    out_dir,
):
    """Write a dataset (PNGs, annotations, manifest) and return the manifest.

    Positives are split 50/50 train/test in generation order; negatives are
    all train-side material for mining.
    """
    from pathlib import Path

    from . import formats

    if n_pos < 1 or n_neg < 1:
        raise InvalidArgument("need at least one positive and one negative")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    n_train = n_pos // 2
    for i in range(n_pos):
        scene = generate_scene(params, seed + i)
        image_id = scene.image.id
        img_rel = f"images/{image_id}.png"
        ann_rel = f"annotations/{image_id}.json"
        formats.save_image(scene.image, out / img_rel)
        record = formats.AnnotationRecord(
            image_id=image_id,
            schema_name="head8",
            bindings=dict(scene.annotation.bindings),
            annotator="synth",
            refined=False,
        )
        formats.save_annotation(record, out / ann_rel)
        entries.append(
            formats.ManifestEntry(
                image=img_rel,
                label="positive",
                split="train" if i < n_train else "test",
                annotation=ann_rel,
            )
        )
    for i in range(n_neg):
        image = generate_negative_image(params, seed + n_pos + i)
        img_rel = f"images/{image.id}.png"
        formats.save_image(image, out / img_rel)
        entries.append(
            formats.ManifestEntry(image=img_rel, label="negative", split="train", annotation=None)
        )
    manifest = formats.DatasetManifest(schema_name="head8", entries=entries)
    formats.save_manifest(manifest, out / "manifest.json")
    return manifest

"""End-to-end orchestration: training-vector construction, negative mining,
the iterative hard-negative loop, and gated beam-search inference."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .candidates import CandidateParams, CandidatePool, build_candidate_pool
from .edgemap import EdgeMap, EdgeParams, compute_edge_map
from .errors import (
    IncompleteAnnotation,
    InsufficientData,
    InvalidArgument,
    NoInterpretation,
    NoNegativesAvailable,
)
from .forest import ForestConfig, TrainedForest, predict_batch, train_forest
from .geometry import LocalRegionImage, Primitive, primitive_type_name, reference_point
from .relations import (
    RelationContext,
    RelationSchema,
    build_relation_schema,
    compute_relation_vector,
)
from .schema import Assignment, ModelSchema

GATE_INFLATION = 1.5
GATE_MIN_HALF_WIDTH = 0.05
GATE_BOUND = (-0.5, 1.5)


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    hard_negative_iterations: int = 3
    negatives_per_iteration: int | None = None  # None -> 2x positive count
    beam_width: int = 200
    accept_threshold: float = 0.5
    balance_classes: bool = True  # oversample positives to match negative mass
    workers: int = 0  # 0/1 = in-process; >1 = process pool for mining
    # also add, per training image, the detector candidates closest to the
    # annotation as a positive example, so scoring sees detector-born vectors
    # on both sides of the decision
    detector_positives: bool = True
    detector_positive_tolerance: float = 0.08  # max per-slot normalized error

    def __post_init__(self):
        if self.hard_negative_iterations < 1:
            raise InvalidArgument("need at least one training iteration")
        if self.beam_width < 1:
            raise InvalidArgument("beam width must be >= 1")


@dataclass
class Interval:
    lo: float
    hi: float

    def contains(self, v: float) -> bool:
        return self.lo <= v <= self.hi

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)


def _inflate(lo: float, hi: float, clip: tuple[float, float] | None = None) -> Interval:
    c = 0.5 * (lo + hi)
    h = max(GATE_INFLATION * 0.5 * (hi - lo), GATE_MIN_HALF_WIDTH)
    out = Interval(c - h, c + h)
    if clip is not None:
        out = Interval(max(out.lo, clip[0]), min(out.hi, clip[1]))
    return out


@dataclass
class GeometricGate:
    """Training-derived boxes that prune the assignment search.

    Boxes hold slot reference points; pairwise intervals hold displacement
    components between ordered slot pairs. Both are inflated about their
    centers so moderate pose variation beyond the training range passes.
    """

    slot_boxes: dict[str, tuple[Interval, Interval]]  # slot -> (x box, y box)
    pair_ranges: dict[tuple[str, str], tuple[Interval, Interval]]  # (i,j) -> (dx, dy)
    slot_variance: dict[str, float]  # training positional variance per slot

    def passes_slot(self, slot_id: str, prim: Primitive) -> bool:
        bx, by = self.slot_boxes[slot_id]
        x, y = reference_point(prim)
        return bx.contains(x) and by.contains(y)

    def passes_pair(self, si: str, sj: str, pi: Primitive, pj: Primitive) -> bool:
        rx, ry = self.pair_ranges[(si, sj)]
        xi, yi = reference_point(pi)
        xj, yj = reference_point(pj)
        return rx.contains(xj - xi) and ry.contains(yj - yi)

    def slot_margin(self, slot_id: str, prim: Primitive) -> float:
        """Distance to the box center in box-half-width units (lower = better)."""
        bx, by = self.slot_boxes[slot_id]
        x, y = reference_point(prim)
        mx = (x - bx.center) / max(bx.half_width, 1e-9)
        my = (y - by.center) / max(by.half_width, 1e-9)
        return float(np.hypot(mx, my))

    def passes_assignment(self, assignment: Assignment) -> bool:
        items = list(assignment.bindings.items())
        for sid, prim in items:
            if not self.passes_slot(sid, prim):
                return False
        for i, (si, pi) in enumerate(items):
            for sj, pj in items[i + 1 :]:
                if not self.passes_pair(si, sj, pi, pj):
                    return False
        return True


def fit_gate(annotations: list[Assignment], schema: ModelSchema) -> GeometricGate:
    """Bounding boxes and displacement ranges over the training annotations."""
    if len(annotations) < 2:
        raise InsufficientData("gate fitting needs >= 2 annotations")
    slot_ids = schema.slot_ids()
    refs: dict[str, np.ndarray] = {}
    for sid in slot_ids:
        pts = []
        for ann in annotations:
            if sid not in ann.bindings:
                raise IncompleteAnnotation(f"annotation missing slot {sid!r}")
            pts.append(reference_point(ann.bindings[sid]))
        refs[sid] = np.asarray(pts)
    boxes = {}
    variance = {}
    for sid, pts in refs.items():
        boxes[sid] = (
            _inflate(pts[:, 0].min(), pts[:, 0].max(), GATE_BOUND),
            _inflate(pts[:, 1].min(), pts[:, 1].max(), GATE_BOUND),
        )
        variance[sid] = float(pts[:, 0].var() + pts[:, 1].var())
    pairs = {}
    for si in slot_ids:
        for sj in slot_ids:
            if si == sj:
                continue
            d = refs[sj] - refs[si]
            pairs[(si, sj)] = (
                _inflate(d[:, 0].min(), d[:, 0].max()),
                _inflate(d[:, 1].min(), d[:, 1].max()),
            )
    return GeometricGate(slot_boxes=boxes, pair_ranges=pairs, slot_variance=variance)


@dataclass
class TrainedModel:
    schema: ModelSchema
    relation_schema: RelationSchema
    forest: TrainedForest
    gate: GeometricGate
    edge_params: EdgeParams
    candidate_params: CandidateParams
    iterations_run: int
    accept_threshold: float
    training_meta: dict = field(default_factory=dict)
    # per-iteration negative vector batches; in-memory diagnostic only, not
    # part of the serialized model
    negative_vector_batches: list | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# training-vector construction


class ImageContext:
    """Lazily computed, reusable per-image state (edge map, pool, caches)."""

    def __init__(self, image: LocalRegionImage, edge_params: EdgeParams,
                 candidate_params: CandidateParams):
        self.image = image
        self._edge_params = edge_params
        self._candidate_params = candidate_params
        self._edges = None
        self._pool = None
        self._relctx = None

    @property
    def edges(self) -> EdgeMap:
        if self._edges is None:
            self._edges = compute_edge_map(self.image, self._edge_params)
        return self._edges

    @property
    def pool(self) -> CandidatePool:
        if self._pool is None:
            self._pool = build_candidate_pool(self.image, self.edges, self._candidate_params)
        return self._pool

    @property
    def relation_context(self) -> RelationContext:
        if self._relctx is None:
            self._relctx = RelationContext(self.image, self.edges)
        return self._relctx


def _detector_positive_vector(
    ann: Assignment,
    image: LocalRegionImage,
    schema: ModelSchema,
    relation_schema: RelationSchema,
    edge_params: EdgeParams,
    candidate_params: CandidateParams,
    tolerance: float,
) -> np.ndarray | None:
    """Relation vector of the detector candidates nearest the annotation.

    Returns None when any slot lacks a candidate within `tolerance` normalized
    error; only faithful re-detections count as positives."""
    from .evaluate import primitive_error

    ctx = ImageContext(image, edge_params, candidate_params)
    by_type = {"point": ctx.pool.points, "contour": ctx.pool.contours, "region": ctx.pool.regions}
    bindings: dict[str, Primitive] = {}
    for slot in schema.slots:
        target = ann.bindings[slot.slot_id]
        best, best_err = None, np.inf
        for cand in by_type[slot.primitive_type]:
            err = primitive_error(cand, target)
            if err < best_err:
                best, best_err = cand, err
        if best is None or best_err > tolerance:
            return None
        bindings[slot.slot_id] = best
    return compute_relation_vector(
        Assignment(bindings=bindings), ctx.image, ctx.edges, schema, relation_schema,
        ctx.relation_context,
    )


def _detpos_task(args):
    return _detector_positive_vector(*args)


def _posvec_task(args):
    ann, image, schema, relation_schema, edge_params = args
    ctx = ImageContext(image, edge_params, CandidateParams())
    return compute_relation_vector(
        ann, ctx.image, ctx.edges, schema, relation_schema, ctx.relation_context
    )


def build_positive_vectors(
    annotations: list[Assignment],
    images: dict[str, LocalRegionImage],
    annotation_image_ids: list[str],
    schema: ModelSchema,
    relation_schema: RelationSchema,
    edge_params: EdgeParams = EdgeParams(),
    workers: int = 0,
) -> np.ndarray:
    """One relation vector per annotation, with per-image edge maps."""
    if len(annotations) != len(annotation_image_ids):
        raise InvalidArgument("annotations and image ids must align")
    for ann, image_id in zip(annotations, annotation_image_ids):
        if image_id not in images:
            raise InvalidArgument(f"unknown image id {image_id!r}")
        for sid in schema.slot_ids():
            if sid not in ann.bindings:
                raise IncompleteAnnotation(f"annotation for {image_id!r} missing slot {sid!r}")
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [
            (ann, images[image_id], schema, relation_schema, edge_params)
            for ann, image_id in zip(annotations, annotation_image_ids)
        ]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            vectors = list(ex.map(_posvec_task, jobs, chunksize=4))
        return np.asarray(vectors)
    vectors = []
    contexts: dict[str, ImageContext] = {}
    for ann, image_id in zip(annotations, annotation_image_ids):
        ctx = contexts.setdefault(
            image_id, ImageContext(images[image_id], edge_params, CandidateParams())
        )
        vectors.append(
            compute_relation_vector(
                ann, ctx.image, ctx.edges, schema, relation_schema, ctx.relation_context
            )
        )
    return np.asarray(vectors)


# ---------------------------------------------------------------------------
# confusable-window mining


@dataclass
class MinedWindow:
    image_id: str
    rect: tuple[int, int, int, int]  # x, y, w, h in source pixels
    similarity: float
    crop: LocalRegionImage


def _hog_descriptor(intensities: np.ndarray, cells: int = 4, bins: int = 8) -> np.ndarray:
    """Gradient-orientation histogram over a cell grid, 2x2-block normalized."""
    gy, gx = np.gradient(intensities.astype(np.float64))
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    h, w = intensities.shape
    hist = np.zeros((cells, cells, bins))
    cy = np.minimum((np.arange(h) * cells) // h, cells - 1)
    cx = np.minimum((np.arange(w) * cells) // w, cells - 1)
    b = np.minimum((ang / np.pi * bins).astype(int), bins - 1)
    for i in range(h):
        np.add.at(hist[cy[i]], (cx, b[i]), mag[i])
    blocks = []
    for by in range(cells - 1):
        for bx in range(cells - 1):
            block = hist[by : by + 2, bx : bx + 2].ravel()
            norm = np.linalg.norm(block)
            blocks.append(block / norm if norm > 1e-12 else block)
    return np.concatenate(blocks)


def _resize(intensities: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = intensities.shape
    zoom = (size[1] / h, size[0] / w)
    out = ndimage.zoom(intensities, zoom, order=1)
    return np.clip(out[: size[1], : size[0]], 0.0, 1.0)


def mine_confusable_windows(
    positive_images: list[LocalRegionImage],
    negative_pool: list[LocalRegionImage],
    k: int,
) -> list[MinedWindow]:
    """Rank pool windows by gradient-histogram similarity to any positive."""
    if not positive_images:
        raise InvalidArgument("need at least one positive image")
    if not negative_pool:
        raise InvalidArgument("empty negative pool")
    crop_w = positive_images[0].width
    crop_h = positive_images[0].height
    pos = np.asarray([_hog_descriptor(im.intensities) for im in positive_images])
    pos_norm = pos / np.maximum(np.linalg.norm(pos, axis=1, keepdims=True), 1e-12)

    windows: list[MinedWindow] = []
    for im in negative_pool:
        base = min(im.width, im.height)
        for scale in (1.0, 0.75, 0.5):
            side = max(8, int(round(base * scale)))
            stride = max(1, side // 4)
            for y0 in range(0, im.height - side + 1, stride):
                for x0 in range(0, im.width - side + 1, stride):
                    crop = im.intensities[y0 : y0 + side, x0 : x0 + side]
                    d = _hog_descriptor(crop)
                    n = np.linalg.norm(d)
                    dn = d / n if n > 1e-12 else d
                    sim = float((pos_norm @ dn).max())
                    resized = _resize(crop, (crop_w, crop_h))
                    windows.append(
                        MinedWindow(
                            image_id=im.id,
                            rect=(x0, y0, side, side),
                            similarity=sim,
                            crop=LocalRegionImage(
                                crop_w, crop_h, resized, id=f"{im.id}:{x0},{y0},{side}"
                            ),
                        )
                    )
    windows.sort(key=lambda m: (-m.similarity, m.image_id, m.rect))
    return windows[:k]


# ---------------------------------------------------------------------------
# negative sampling


def _gate_passing_candidates(
    gate: GeometricGate, schema: ModelSchema, pool: CandidatePool
) -> dict[str, list[Primitive]]:
    by_type = {"point": pool.points, "contour": pool.contours, "region": pool.regions}
    out = {}
    for slot in schema.slots:
        out[slot.slot_id] = [
            p for p in by_type[slot.primitive_type] if gate.passes_slot(slot.slot_id, p)
        ]
    return out


def _random_assignment(
    gate: GeometricGate,
    schema: ModelSchema,
    per_slot: dict[str, list[Primitive]],
    rng: np.random.Generator,
    max_tries: int = 50,
) -> Assignment | None:
    slot_ids = schema.slot_ids()
    for _ in range(max_tries):
        bindings: dict[str, Primitive] = {}
        ok = True
        for sid in slot_ids:
            cands = per_slot[sid]
            if not cands:
                return None
            order = rng.permutation(len(cands))
            pick = None
            for ci in order[: min(len(order), 8)]:
                p = cands[int(ci)]
                if all(
                    gate.passes_pair(bs, sid, bp, p) and gate.passes_pair(sid, bs, p, bp)
                    for bs, bp in bindings.items()
                ):
                    pick = p
                    break
            if pick is None:
                ok = False
                break
            bindings[sid] = pick
        if ok:
            return Assignment(bindings=bindings)
    return None


# worker-side state for parallel mining; sent once per process via initializer
_MINE_STATE: dict = {}


def _mine_init(state: dict):
    _MINE_STATE.clear()
    _MINE_STATE.update(state)


def _mine_random_one(ctx: ImageContext, i: int) -> list[np.ndarray]:
    """All random gate-passing vectors for one image; seeded per image so the
    result is identical whether images are processed in- or out-of-process."""
    s = _MINE_STATE
    rng = np.random.default_rng([s["seed"], i])
    per_slot = _gate_passing_candidates(s["gate"], s["schema"], ctx.pool)
    out = []
    for _ in range(s["per_image"]):
        a = _random_assignment(s["gate"], s["schema"], per_slot, rng)
        if a is None:
            break
        out.append(
            compute_relation_vector(
                a, ctx.image, ctx.edges, s["schema"], s["relation_schema"], ctx.relation_context
            )
        )
    return out


def _mine_model_one(ctx: ImageContext) -> list[tuple[float, np.ndarray]] | None:
    """Top-scoring beam assignments for one image (already vectorized by the
    search), up to the per-image quota."""
    s = _MINE_STATE
    model = s["model"]
    try:
        _, _, diag = interpret(ctx.image, model, beam_width=s["beam_width"], context=ctx)
    except NoInterpretation:
        return None
    return [
        (float(diag["beam_scores"][r]), diag["beam_vectors"][r])
        for r in diag["beam_order"][: s["per_image"]]
    ]


def _mine_random_task(args):
    i, ctx = args
    return i, _mine_random_one(ctx, i)


def _mine_model_task(args):
    i, ctx = args
    return i, _mine_model_one(ctx)


def sample_negative_vectors(
    gate: GeometricGate,
    schema: ModelSchema,
    relation_schema: RelationSchema,
    contexts: list[ImageContext],
    m: int,
    seed: int,
    model: TrainedModel | None = None,
    beam_width: int = 200,
    workers: int = 0,
) -> tuple[np.ndarray, dict]:
    """Negative relation vectors: random gate-passing assignments before any
    forest exists, then the highest-scoring interpretations once one does.

    Per-image seeding makes the output independent of worker count."""
    if not contexts:
        raise NoNegativesAvailable("empty negative image set")
    per_image = int(np.ceil(m / len(contexts)))
    state = {
        "gate": gate,
        "schema": schema,
        "relation_schema": relation_schema,
        "seed": seed,
        "per_image": per_image,
        "model": model,
        "beam_width": beam_width,
    }
    task = _mine_random_task if model is None else _mine_model_task
    jobs = list(enumerate(contexts))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(
            max_workers=workers, initializer=_mine_init, initargs=(state,)
        ) as ex:
            results = list(ex.map(task, jobs, chunksize=4))
    else:
        _mine_init(state)
        results = [task(j) for j in jobs]
    results.sort(key=lambda r: r[0])

    starved = 0
    vectors: list[np.ndarray] = []
    if model is None:
        for _, vecs in results:
            if not vecs:
                starved += 1
            vectors.extend(vecs)
        vectors = vectors[:m]
    else:
        scored = []
        for i, res in results:
            if res is None:
                starved += 1
                continue
            for rank, (score, vec) in enumerate(res):
                scored.append((score, i, rank, vec))
        scored.sort(key=lambda t: (-t[0], t[1], t[2]))
        vectors = [v for _, _, _, v in scored[:m]]
    if not vectors:
        raise NoNegativesAvailable("all negative images starved")
    return np.asarray(vectors), {"starved_images": starved, "count": len(vectors)}


# ---------------------------------------------------------------------------
# inference


def interpret(
    image: LocalRegionImage,
    model: TrainedModel,
    beam_width: int = 200,
    context: ImageContext | None = None,
) -> tuple[Assignment, float, dict]:
    """Gated beam search over candidate assignments, scored by the forest.

    Slots are filled most-constrained-first; partial beams rank by gate
    margin and completed assignments by forest score.
    """
    ctx = context or ImageContext(image, model.edge_params, model.candidate_params)
    gate = model.gate
    schema = model.schema
    per_slot = _gate_passing_candidates(gate, schema, ctx.pool)
    order = sorted(schema.slot_ids(), key=lambda s: (gate.slot_variance[s], s))
    diagnostics: dict = {
        "slot_order": order,
        "candidates_per_slot": {s: len(per_slot[s]) for s in order},
        "beam_sizes": [],
    }
    for sid in order:
        if not per_slot[sid]:
            raise NoInterpretation(sid)

    # beam entries: (margin_sum, candidate index tuple, bindings)
    beams: list[tuple[float, tuple[int, ...], dict[str, Primitive]]] = [(0.0, (), {})]
    for sid in order:
        cands = per_slot[sid]
        margins = [gate.slot_margin(sid, p) for p in cands]
        extended = []
        for margin_sum, idx, bindings in beams:
            for ci, p in enumerate(cands):
                ok = True
                for bs, bp in bindings.items():
                    if not (gate.passes_pair(bs, sid, bp, p) and gate.passes_pair(sid, bs, p, bp)):
                        ok = False
                        break
                if not ok:
                    continue
                nb = dict(bindings)
                nb[sid] = p
                extended.append((margin_sum + margins[ci], idx + (ci,), nb))
        if not extended:
            raise NoInterpretation(sid)
        extended.sort(key=lambda t: (t[0], t[1]))
        beams = extended[:beam_width]
        diagnostics["beam_sizes"].append(len(beams))

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
            for _, _, b in beams
        ]
    )
    scores = predict_batch(model.forest, X)
    ranked = sorted(range(len(beams)), key=lambda i: (-scores[i], beams[i][1]))
    best = ranked[0]
    assignment = Assignment(bindings=beams[best][2], score=float(scores[best]))
    diagnostics["scored_assignments"] = len(beams)
    diagnostics["beam_order"] = ranked
    diagnostics["beam_scores"] = scores
    diagnostics["beam_vectors"] = X
    return assignment, float(scores[best]), diagnostics


# ---------------------------------------------------------------------------
# full training loop


def train_interpretation_model(
    annotations: list[Assignment],
    annotation_image_ids: list[str],
    positive_images: dict[str, LocalRegionImage],
    negative_images: list[LocalRegionImage],
    schema: ModelSchema,
    train_config: TrainConfig,
    edge_params: EdgeParams = EdgeParams(),
    candidate_params: CandidateParams = CandidateParams(),
    forest_config: ForestConfig | None = None,
) -> TrainedModel:
    """Fit gate, build vectors, and run the iterative hard-negative loop."""
    if len(annotations) < 10:
        raise InsufficientData("training needs at least 10 annotations")
    if not negative_images:
        raise NoNegativesAvailable("training needs negative images")
    tier = schema.relation_tier
    relation_schema = build_relation_schema(schema, tier)
    gate = fit_gate(annotations, schema)
    pos_vectors = build_positive_vectors(
        annotations, positive_images, annotation_image_ids, schema, relation_schema, edge_params,
        workers=train_config.workers,
    )
    detector_matched = 0
    if train_config.detector_positives:
        jobs = [
            (ann, positive_images[image_id], schema, relation_schema, edge_params,
             candidate_params, train_config.detector_positive_tolerance)
            for ann, image_id in zip(annotations, annotation_image_ids)
        ]
        if train_config.workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=train_config.workers) as ex:
                extra = list(ex.map(_detpos_task, jobs, chunksize=4))
        else:
            extra = [_detpos_task(j) for j in jobs]
        kept = [v for v in extra if v is not None]
        detector_matched = len(kept)
        if kept:
            pos_vectors = np.vstack([pos_vectors] + [np.asarray(kept)])
    m = train_config.negatives_per_iteration or 2 * len(annotations)
    neg_contexts = [
        ImageContext(im, edge_params, candidate_params) for im in negative_images
    ]

    neg_vectors, info = sample_negative_vectors(
        gate, schema, relation_schema, neg_contexts, m, seed=train_config.seed,
        workers=train_config.workers,
    )
    all_neg = [neg_vectors]
    meta: dict = {
        "iterations": [{"iteration": 0, **info}],
        "tier": tier,
        "detector_matched_positives": detector_matched,
    }

    model: TrainedModel | None = None
    T = train_config.hard_negative_iterations
    for t in range(T):
        n_neg_total = sum(len(v) for v in all_neg)
        # replicate positives so leaf fractions are not dominated by the
        # larger negative mass; scores then read as balanced probabilities
        reps = (
            max(1, int(round(n_neg_total / len(pos_vectors))))
            if train_config.balance_classes
            else 1
        )
        X = np.vstack([pos_vectors] * reps + all_neg)
        y = np.concatenate([np.ones(reps * len(pos_vectors)), np.zeros(n_neg_total)])
        fc = forest_config or ForestConfig(seed=train_config.seed)
        fc = replace(fc, seed=fc.seed + t)
        forest = train_forest(X, y, fc)
        model = TrainedModel(
            schema=schema,
            relation_schema=relation_schema,
            forest=forest,
            gate=gate,
            edge_params=edge_params,
            candidate_params=candidate_params,
            iterations_run=t + 1,
            accept_threshold=train_config.accept_threshold,
            training_meta=meta,
            negative_vector_batches=list(all_neg),
        )
        if t == T - 1:
            break
        mined, info = sample_negative_vectors(
            gate,
            schema,
            relation_schema,
            neg_contexts,
            m,
            seed=train_config.seed + t + 1,
            model=model,
            beam_width=train_config.beam_width,
            workers=train_config.workers,
        )
        all_neg.append(mined)
        meta["iterations"].append({"iteration": t + 1, **info})
    assert model is not None
    meta["positive_count"] = len(pos_vectors)
    meta["negative_counts"] = [len(v) for v in all_neg]
    return model

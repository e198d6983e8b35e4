"""Command-line surface: dataset synthesis, training, mining, inference,
evaluation, ablation, and the annotation server.

Every randomized subcommand requires an explicit --seed so runs are
reproducible by construction. All emitted files carry a format_version and
round-trip byte-identically (see formats)."""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from .errors import FormatError, LocalInterpError, NoInterpretation
from .evaluate import EvalConfig, ablation_compare, evaluate_dataset
from .formats import (
    FORMAT_VERSION,
    DatasetManifest,
    canonical_dumps,
    interpretation_to_dict,
    load_annotation,
    load_image,
    load_interpretation,
    load_manifest,
    load_model,
    save_interpretation,
    save_metrics,
    save_model,
)
from .pipeline import ImageContext, TrainConfig, interpret, sample_negative_vectors, train_interpretation_model
from .schema import Assignment
from .synth import SceneParams, generate_dataset, head8_schema

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_IO = 4
EXIT_DOMAIN = 5


def _fail(code: int, kind: str, detail: str):
    click.echo(json.dumps({"error": kind, "detail": detail}), err=True)
    sys.exit(code)


def _schema_for(name: str, tier: str):
    if name != "head8":
        _fail(EXIT_USAGE, "unknown-schema", f"unknown schema {name!r}")
    return head8_schema(tier.upper())


def _load_manifest_or_fail(path: str) -> DatasetManifest:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        return load_manifest(p)
    except FileNotFoundError as e:
        _fail(EXIT_IO, "unreadable-file", str(e))
    except FormatError as e:
        _fail(EXIT_FORMAT, "format-error", str(e))


def _manifest_dir(path: str) -> Path:
    p = Path(path)
    return p if p.is_dir() else p.parent


@click.group()
def main():
    """Local-region interpretation toolkit."""


# ---------------------------------------------------------------------------
# synth


@main.command()
@click.option("--pos", type=int, default=200, show_default=True,
              help="Positive scenes (split 50/50 train/test).")
@click.option("--neg", type=int, default=400, show_default=True, help="Negative images.")
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def synth(pos, neg, seed, out):
    """Generate a synthetic labeled dataset plus manifest."""
    manifest = generate_dataset(pos, neg, SceneParams(), seed, out)
    click.echo(f"wrote {len(manifest.entries)} entries under {out}")


# ---------------------------------------------------------------------------
# train


def _load_split(manifest: DatasetManifest, base: Path, split: str):
    positives, annotations, negatives = [], [], []
    for e in manifest.entries:
        if e.split != split:
            continue
        image = load_image(base / e.image)
        if e.label == "positive":
            if e.annotation is None:
                raise FormatError(f"positive entry {e.image} lacks an annotation")
            positives.append(image)
            annotations.append(load_annotation(base / e.annotation))
        else:
            negatives.append(image)
    return positives, annotations, negatives


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_name", default="head8", show_default=True)
@click.option("--tier", type=click.Choice(["full", "reduced"], case_sensitive=False), default="full", show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--iterations", type=int, default=3, show_default=True)
@click.option("--negatives-per-iteration", type=int, default=None)
@click.option("--workers", type=int, default=0, show_default="in-process")
@click.option("--out", type=click.Path(), required=True)
def train(manifest_path, schema_name, tier, seed, iterations, negatives_per_iteration, workers, out):
    """Fit a model from the train split of a dataset manifest."""
    manifest = _load_manifest_or_fail(manifest_path)
    base = _manifest_dir(manifest_path)
    schema = _schema_for(schema_name, tier)
    positives, annotations, negatives = _load_split(manifest, base, "train")
    model = train_interpretation_model(
        [r.to_assignment() for r in annotations],
        [r.image_id for r in annotations],
        {im.id: im for im in positives},
        negatives,
        schema,
        TrainConfig(
            seed=seed,
            hard_negative_iterations=iterations,
            negatives_per_iteration=negatives_per_iteration,
            workers=workers,
        ),
    )
    save_model(model, out)
    click.echo(f"trained on {len(annotations)} positives / {len(negatives)} negative images -> {out}")


# ---------------------------------------------------------------------------
# mine


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--count", type=int, default=200, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def mine(model_path, manifest_path, count, seed, out):
    """Mine high-scoring negative interpretation vectors under a trained model."""
    model = load_model(model_path)
    manifest = _load_manifest_or_fail(manifest_path)
    base = _manifest_dir(manifest_path)
    _, _, negatives = _load_split(manifest, base, "train")
    contexts = [ImageContext(im, model.edge_params, model.candidate_params) for im in negatives]
    vectors, info = sample_negative_vectors(
        model.gate, model.schema, model.relation_schema, contexts, count, seed=seed, model=model
    )
    Path(out).write_text(
        canonical_dumps(
            {
                "format_version": FORMAT_VERSION,
                "info": info,
                "vectors": [[float(v) for v in row] for row in vectors],
            }
        )
    )
    click.echo(f"mined {len(vectors)} vectors ({info['starved_images']} starved images) -> {out}")


# ---------------------------------------------------------------------------
# interpret


def _interpret_one(args):
    model_path, image_path = args
    model = _INTERPRET_MODEL if _INTERPRET_MODEL is not None else load_model(model_path)
    image = load_image(image_path)
    try:
        assignment, score, diagnostics = interpret(image, model)
    except NoInterpretation as e:
        return image.id, interpretation_to_dict(
            image.id, None, 0.0, model.accept_threshold, {"no_interpretation": e.slot_id}
        )
    # keep only the JSON-safe summary fields
    for heavy in ("beam_sizes", "beam_order", "beam_scores", "beam_vectors"):
        diagnostics.pop(heavy, None)
    return image.id, interpretation_to_dict(
        image.id, assignment, score, model.accept_threshold, diagnostics
    )


_INTERPRET_MODEL = None


def _pool_init(model_path):
    global _INTERPRET_MODEL
    _INTERPRET_MODEL = load_model(model_path)


@main.command("interpret")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--image", "images", type=click.Path(exists=True), multiple=True, required=True,
              help="Image file or directory; repeatable.")
@click.option("--out", type=click.Path(), required=True,
              help="Output file (single image) or directory.")
@click.option("--workers", type=int, default=0, show_default="available parallelism")
def interpret_cmd(model_path, images, out, workers):
    """Interpret one or more images with a trained model."""
    paths: list[Path] = []
    for item in images:
        p = Path(item)
        paths.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    if not paths:
        _fail(EXIT_USAGE, "no-images", "no input images found")
    jobs = [(model_path, str(p)) for p in paths]
    if len(jobs) == 1 or workers == 1:
        _pool_init(model_path)
        results = [_interpret_one(j) for j in jobs]
    else:
        n = workers or os.cpu_count() or 1
        with ProcessPoolExecutor(max_workers=n, initializer=_pool_init, initargs=(model_path,)) as ex:
            results = list(ex.map(_interpret_one, jobs))
    results.sort(key=lambda r: r[0])
    out_path = Path(out)
    if len(results) == 1 and not out_path.is_dir():
        save_interpretation(results[0][1], out_path)
    else:
        out_path.mkdir(parents=True, exist_ok=True)
        for image_id, d in results:
            save_interpretation(d, out_path / f"{image_id}.interp")
    click.echo(f"interpreted {len(results)} image(s)")


# ---------------------------------------------------------------------------
# evaluate


@main.command()
@click.option("--pred", "pred_dir", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True,
              help="Dataset manifest (or its directory).")
@click.option("--theta", type=float, default=0.15, show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--schema", "schema_name", default="head8", show_default=True)
@click.option("--tier", type=click.Choice(["full", "reduced"], case_sensitive=False), default="full")
@click.option("--out-report", type=click.Path(), default="metrics.json", show_default=True)
@click.option("--out-table", type=click.Path(), default="metrics.tsv", show_default=True)
def evaluate(pred_dir, gt_path, theta, split, schema_name, tier, out_report, out_table):
    """Score interpretation files in --pred against annotations from --gt."""
    manifest = _load_manifest_or_fail(gt_path)
    base = _manifest_dir(gt_path)
    schema = _schema_for(schema_name, tier)
    ground_truth: dict[str, Assignment] = {}
    for e in manifest.entries:
        if e.split != split or e.label != "positive" or e.annotation is None:
            continue
        record = load_annotation(base / e.annotation)
        ground_truth[record.image_id] = record.to_assignment()
    if not ground_truth:
        _fail(EXIT_USAGE, "no-ground-truth", f"no annotated {split} positives in manifest")
    predictions: dict[str, Assignment | None] = {}
    for image_id in ground_truth:
        p = Path(pred_dir) / f"{image_id}.interp"
        if not p.exists():
            predictions[image_id] = None
            continue
        _, assignment, _ = load_interpretation(p)
        predictions[image_id] = assignment
    report = evaluate_dataset(predictions, ground_truth, schema, EvalConfig(correct_threshold=theta))
    save_metrics(report, out_report, out_table)
    click.echo(
        f"mean error {report.overall_mean_error:.4f}  "
        f"fraction correct {report.overall_fraction_correct:.4f}  "
        f"({report.image_count} images)"
    )


# ---------------------------------------------------------------------------
# ablate

_ABLATE_MODEL = None


def _ablate_init(model):
    global _ABLATE_MODEL
    _ABLATE_MODEL = model


def _ablate_one(item):
    image_id, image = item
    try:
        assignment, _, _ = interpret(image, _ABLATE_MODEL)
        return image_id, assignment
    except NoInterpretation:
        return image_id, None


def _interpret_in_memory(model, images: dict, workers: int) -> dict:
    items = sorted(images.items())
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_ablate_init,
                                 initargs=(model,)) as ex:
            pairs = list(ex.map(_ablate_one, items))
    else:
        _ablate_init(model)
        pairs = [_ablate_one(i) for i in items]
    return dict(pairs)


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--iterations", type=int, default=3, show_default=True)
@click.option("--negatives-per-iteration", type=int, default=None)
@click.option("--theta", type=float, default=0.15, show_default=True)
@click.option("--workers", type=int, default=0, show_default="available parallelism")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def ablate(manifest_path, seed, iterations, negatives_per_iteration, theta, workers, out):
    """Train and evaluate FULL and REDUCED relation tiers on one dataset."""
    manifest = _load_manifest_or_fail(manifest_path)
    base = _manifest_dir(manifest_path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    positives, annotations, negatives = _load_split(manifest, base, "train")
    test_pos, test_ann, _ = _load_split(manifest, base, "test")
    if not test_ann:
        _fail(EXIT_USAGE, "no-test-split", "ablate needs annotated test positives")
    ground_truth = {r.image_id: r.to_assignment() for r in test_ann}
    test_images = {im.id: im for im in test_pos}
    reports = {}
    for tier in ("FULL", "REDUCED"):
        schema = head8_schema(tier)
        model = train_interpretation_model(
            [r.to_assignment() for r in annotations],
            [r.image_id for r in annotations],
            {im.id: im for im in positives},
            negatives,
            schema,
            TrainConfig(
                seed=seed,
                hard_negative_iterations=iterations,
                negatives_per_iteration=negatives_per_iteration,
                workers=workers,
            ),
        )
        save_model(model, out_dir / f"model_{tier.lower()}.interp")
        predictions = _interpret_in_memory(
            model, {i: test_images[i] for i in ground_truth}, workers
        )
        report = evaluate_dataset(
            predictions, ground_truth, schema, EvalConfig(correct_threshold=theta)
        )
        save_metrics(
            report, out_dir / f"metrics_{tier.lower()}.json", out_dir / f"metrics_{tier.lower()}.tsv"
        )
        reports[tier] = report
        click.echo(
            f"{tier}: mean error {report.overall_mean_error:.4f}  "
            f"fraction correct {report.overall_fraction_correct:.4f}"
        )
    result = ablation_compare(reports["FULL"], reports["REDUCED"])
    (out_dir / "ablation.json").write_text(
        canonical_dumps(
            {
                "format_version": FORMAT_VERSION,
                "ratio": result.ratio,
                "per_slot_ratios": result.per_slot_ratios,
                "full_fraction": result.full_fraction,
                "reduced_fraction": result.reduced_fraction,
            }
        )
    )
    click.echo(f"fraction-correct ratio FULL/REDUCED: {result.ratio}")


# ---------------------------------------------------------------------------
# annotate-serve


@main.command("annotate-serve")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True,
              help="Directory with images/ (and manifest/annotations as created).")
@click.option("--schema", "schema_name", default="head8", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8417, show_default=True)
def annotate_serve(data_dir, schema_name, host, port):
    """Serve the browser annotation UI and its HTTP API."""
    import uvicorn

    from .server import create_app

    app = create_app(Path(data_dir), _schema_for(schema_name, "FULL"))
    uvicorn.run(app, host=host, port=port, log_level="warning")


def entry():
    try:
        main(standalone_mode=False)
    except click.UsageError as e:
        _fail(EXIT_USAGE, "usage-error", str(e))
    except click.ClickException as e:
        _fail(EXIT_USAGE, "cli-error", str(e))
    except FormatError as e:
        _fail(EXIT_FORMAT, "format-error", str(e))
    except (FileNotFoundError, PermissionError, OSError) as e:
        _fail(EXIT_IO, "unreadable-file", str(e))
    except LocalInterpError as e:
        _fail(EXIT_DOMAIN, type(e).__name__, str(e))


if __name__ == "__main__":
    entry()

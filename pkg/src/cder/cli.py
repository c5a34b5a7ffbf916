"""Command-line entry point: ``cder generate|train|predict|crossval|inspect|export-regions``."""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from .classify import cross_validate, predict
from .covertree import CoverTreeConfig
from .data import DataError, assign_weights, pool, read_collection, write_csv, write_json
from .entropy import select_regions
from .gaussians import CderModel, ModelError, train
from .synth import GENERATORS, gen_deepfield

EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map library exceptions onto the documented exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DataError, ModelError, OSError) as exc:
            _fail(str(exc), EXIT_INPUT)
        except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
            _fail(f"numerical failure: {exc}", EXIT_NUMERIC)
        except ValueError as exc:
            _fail(str(exc), EXIT_INPUT)
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _config(ctx) -> CoverTreeConfig:
    return CoverTreeConfig(theta=ctx.obj["theta"])


def _emit(ctx, payload, table: str) -> None:
    if ctx.obj["json"]:
        click.echo(json.dumps(payload, indent=1))
    else:
        click.echo(table, nl=False)


@click.group()
@click.option("--theta", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.5,
              show_default=True, help="Cover-tree shrinkage ratio.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for generators and splits.")
@click.option("--non-parsimonious", is_flag=True, help="Keep searching where the parsimonious rule would stop.")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of tables.")
@click.pass_context
def main(ctx, theta, seed, non_parsimonious, as_json):
    """Entropy-guided Gaussian coordinates for labeled point clouds."""
    ctx.ensure_object(dict)
    ctx.obj.update(theta=theta, seed=seed, parsimonious=not non_parsimonious, json=as_json)


@main.command()
@click.option("--experiment", type=click.Choice(sorted(GENERATORS)), required=True)
@click.option("--seed", type=int, default=None, help="Overrides the global seed.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV or .json output.")
@click.option("--ground-truth", type=click.Path(dir_okay=False), default=None,
              help="Deep field only: write the mixture components as JSON.")
@click.pass_context
@_guard
def generate(ctx, experiment, seed, out, ground_truth):
    """Write a synthetic collection."""
    seed = ctx.obj["seed"] if seed is None else seed
    if experiment == "deepfield":
        collection, comps = gen_deepfield(seed)
        if ground_truth:
            Path(ground_truth).write_text(json.dumps({"seed": seed, "components": [c.to_dict() for c in comps]},
                                                     indent=1))
    else:
        if ground_truth:
            raise DataError("--ground-truth is only available for the deepfield experiment")
        collection = GENERATORS[experiment](seed)
    if Path(out).suffix.lower() == ".json":
        write_json(collection, out)
    else:
        write_csv(collection, out)
    click.echo(f"wrote {len(collection)} clouds ({sum(len(c) for c in collection.clouds)} points) to {out}")


@main.command(name="train")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(dir_okay=False), required=True, help="Model JSON path.")
@click.pass_context
@_guard
def train_cmd(ctx, data, out):
    """Train a model on a labeled collection."""
    collection = read_collection(data)
    if any(c.label is None for c in collection.clouds):
        raise DataError(f"{data}: every training cloud needs a label")
    model, selection = train(collection, _config(ctx), ctx.obj["parsimonious"], return_selection=True)
    model.save(out)
    m = model.coefficients()
    summary = {
        "model": str(out),
        "coordinates": len(model),
        "levels_built": selection.stop_level + 1,
        "stop_level": selection.stop_level,
        "coefficient_min": float(m.min()) if m.size else None,
        "coefficient_max": float(m.max()) if m.size else None,
        "per_label": {str(lab): int(sum(c.label == k for c in model.coordinates))
                      for k, lab in enumerate(model.labels)},
    }
    lines = [f"model: {out}",
             f"coordinates: {len(model)}",
             f"stop level: {selection.stop_level}"]
    if m.size:
        lines.append(f"coefficient range: {m.min():.6g} .. {m.max():.6g}")
    _emit(ctx, summary, "\n".join(lines) + "\n")


def _load_model(path) -> CderModel:
    try:
        return CderModel.load(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ModelError(f"{path}: not a model file ({exc})") from None


@main.command(name="predict")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@_guard
def predict_cmd(ctx, model_path, data):
    """Predict a label for every cloud in DATA."""
    model = _load_model(model_path)
    collection = read_collection(data)
    if collection.dimension != model.dimension:
        raise DataError(f"{data}: dimension {collection.dimension} does not match model dimension {model.dimension}")
    rows = []
    for cloud in collection.clouds:
        p = predict(model, cloud)
        rows.append({
            "id": cloud.id,
            "label": model.labels[p.label],
            "norms": [float(v) for v in p.per_label_norms],
            "low_confidence": p.low_confidence,
        })
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["cloud_id", "predicted"] + [f"norm_{lab}" for lab in model.labels])
    for r in rows:
        out.writerow([r["id"], r["label"]] + [repr(v) for v in r["norms"]])
    _emit(ctx, {"labels": list(model.labels), "predictions": rows}, buf.getvalue())


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--folds", type=click.IntRange(min=2), default=5, show_default=True)
@click.option("--test-size", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.2,
              show_default=True)
@click.option("--disjoint-folds", is_flag=True, help="Classical stratified k-fold instead of repeated resamples.")
@click.pass_context
@_guard
def crossval(ctx, data, folds, test_size, disjoint_folds):
    """Stratified cross-validation of train + predict."""
    collection = read_collection(data)
    report = cross_validate(collection, folds, test_size, ctx.obj["seed"], _config(ctx),
                            ctx.obj["parsimonious"], disjoint_folds)
    lines = ["fold  accuracy  coordinates"]
    for k, (acc, n) in enumerate(zip(report.per_fold_accuracy, report.n_coordinates)):
        lines.append(f"{k:>4}  {acc:8.4f}  {n:>11}")
    lines.append(f"mean  {report.mean_accuracy:8.4f}")
    lines.append("")
    lines.append("confusion (rows true, columns predicted)")
    names = [str(lab) for lab in collection.labels]
    width = max(6, *(len(n) for n in names))
    lines.append(" " * width + "".join(f"{n:>{width + 1}}" for n in names))
    for name, row in zip(names, report.confusion):
        lines.append(f"{name:>{width}}" + "".join(f"{v:>{width + 1}}" for v in row))
    payload = report.to_dict()
    payload["labels"] = list(collection.labels)
    _emit(ctx, payload, "\n".join(lines) + "\n")


@main.command()
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--dump", type=click.Path(dir_okay=False), default=None,
              help="Write the per-level cover-tree dump as JSON.")
@click.pass_context
@_guard
def inspect(ctx, data, dump):
    """Per-level table of adults, candidates and builds."""
    collection = read_collection(data)
    selection = select_regions(pool(assign_weights(collection)), _config(ctx), ctx.obj["parsimonious"])
    tree = selection.tree
    stats = {s.level: s for s in selection.stats}
    rows = []
    for lvl in tree.levels:
        s = stats.get(lvl.level)
        rows.append({
            "level": lvl.level,
            "radius": lvl.radius,
            "adults": lvl.n_adults,
            "candidates": s.n_candidates if s else 0,
            "built": s.n_built if s else 0,
        })
    if dump:
        Path(dump).write_text(json.dumps(tree.dump(), indent=1))
    lines = ["level  radius        adults  candidates  built"]
    for r in rows:
        lines.append(f"{r['level']:>5}  {r['radius']:<12.6g}  {r['adults']:>6}  {r['candidates']:>10}  {r['built']:>5}")
    lines.append(f"stop level: {selection.stop_level}")
    _emit(ctx, {"stop_level": selection.stop_level, "levels": rows}, "\n".join(lines) + "\n")


def region_records(model: CderModel) -> list[dict]:
    """Plot data per coordinate, coarse to fine (stable within a level)."""
    order = sorted(range(len(model.coordinates)), key=lambda k: model.coordinates[k].level)
    out = []
    for k in order:
        c = model.coordinates[k]
        out.append({
            "index": k,
            "label": model.labels[c.label],
            "mean": [float(v) for v in c.mean],
            "axes": c.axes().T.tolist(),
            "coefficient": c.coefficient,
            "certainty": 1.0 - c.delta_entropy,
            "level": c.level,
            "radius": c.radius,
        })
    return out


@main.command(name="export-regions")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None, help="Write JSON here instead of stdout.")
@click.pass_context
@_guard
def export_regions(ctx, model_path, out):
    """Per-coordinate ellipses and certainties for external plotting."""
    records = region_records(_load_model(model_path))
    text = json.dumps(records, indent=1)
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {len(records)} regions to {out}")
    else:
        click.echo(text)


if __name__ == "__main__":
    main()

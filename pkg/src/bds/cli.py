"""Command-line entry point: ``bds validate | eval | select | simulate | report``.

Exit codes: 0 success, 2 bad input, 3 generation failure, 4 internal
invariant violation. A ``--config`` JSON file supplies defaults for any
command option (keys are option names with underscores); flags given on the
command line always win.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
import time
from pathlib import Path

import click
from click.core import ParameterSource

from . import dataset as ds
from .errors import BdsError, InputError, PlacementFailure
from .evaluation import (
    DEFAULT_ANIMAL_CLASSES,
    EvalCriteria,
    SweepRow,
    aggregate_metrics,
    consensus_predictions,
    criteria_sweep,
    evaluate_set,
    sweep_to_csv,
)
from .harness import (
    STRATEGIES,
    RunConfig,
    build_report,
    repeat_and_average,
    report_rows,
    report_to_csv,
    trace_lines,
)
from .synthetic import SimulationSpec, default_simulation_spec, write_corpus

log = logging.getLogger("bds")

EXIT_INPUT, EXIT_GENERATION, EXIT_INTERNAL = 2, 3, 4


def _fail(ctx: click.Context, exc: Exception, code: int):
    name = type(exc).__name__
    if ctx.obj.get("json"):
        payload = {"error": name, "message": str(exc), "location": getattr(exc, "location", None)}
        click.echo(json.dumps(payload), err=True)
    else:
        click.echo(f"error: {name}: {exc}", err=True)
    ctx.exit(code)


def guarded(fn):
    """Apply config-file defaults, then translate package errors into exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        kwargs = _apply_config(ctx, kwargs)
        try:
            return fn(*args, **kwargs)
        except PlacementFailure as exc:
            _fail(ctx, exc, EXIT_GENERATION)
        except (InputError, ValueError) as exc:
            _fail(ctx, exc, EXIT_INPUT)
        except (BdsError, AssertionError) as exc:
            _fail(ctx, exc, EXIT_INTERNAL)

    return wrapper


def _apply_config(ctx: click.Context, kwargs: dict) -> dict:
    config = ctx.obj.get("config", {})
    params = {p.name: p for p in ctx.command.params}
    resolved = dict(kwargs)
    for name, value in kwargs.items():
        if name in config and ctx.get_parameter_source(name) in (ParameterSource.DEFAULT, None):
            raw = config[name]
            if params[name].multiple and not isinstance(raw, list):
                raw = [raw]
            resolved[name] = params[name].type_cast_value(ctx, raw)
    for name in ("annotations", "manifest"):
        if name in resolved and resolved[name] is None:
            raise click.UsageError(f"--{name} is required (flag or config key)", ctx)
    ctx.obj["resolved"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in resolved.items()}
    return resolved


def _load_inputs(annotations: str, manifest: str):
    data = ds.load_annotations(annotations)
    pool = ds.load_pool(manifest, data)
    return data, pool


def _classes(value: str | None) -> frozenset[str]:
    if not value:
        return DEFAULT_ANIMAL_CLASSES
    return frozenset(c.strip() for c in value.split(",") if c.strip())


def _out_dir(ctx: click.Context) -> Path:
    out = Path(ctx.obj["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _table(rows: list[dict], columns: list[str]) -> str:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows else len(c) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


annotations_opt = click.option("--annotations", type=click.Path(), default=None, help="COCO annotation JSON.")
manifest_opt = click.option("--manifest", type=click.Path(), default=None, help="Pool manifest JSON.")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON file of option defaults.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output and errors.")
@click.option("--out", default="bds-out", show_default=True, help="Output directory.")
@click.option("--threads", default=1, show_default=True, type=click.IntRange(min=1))
@click.pass_context
def main(ctx: click.Context, config_path, as_json, out, threads):
    """Pick the best detector from a pool of prediction files with UCB."""
    logging.basicConfig(level=os.environ.get("BDS_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj.update(json=as_json, out=out, threads=threads, config={})
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            _fail(ctx, InputError(f"cannot read config: {exc}", config_path), EXIT_INPUT)
        if not isinstance(config, dict):
            _fail(ctx, InputError("config must be a JSON object", config_path), EXIT_INPUT)
        ctx.obj["config"] = {k.replace("-", "_"): v for k, v in config.items()}


@main.command()
@annotations_opt
@manifest_opt
@click.pass_context
@guarded
def validate(ctx, annotations, manifest):
    """Parse all documents and check cross-references."""
    data, pool = _load_inputs(annotations, manifest)
    report = {
        "images": len(data),
        "annotations": sum(len(r.ground_truth) for r in data),
        "models": [
            {
                "model": p.model_name,
                "images_with_detections": sum(1 for v in p.predictions_by_image.values() if v),
                "detections": p.detection_count,
            }
            for p in pool
        ],
    }
    if ctx.obj["json"]:
        click.echo(_dump(report), nl=False)
    else:
        click.echo(f"ok: {report['images']} images, {report['annotations']} annotations, {len(pool)} models")
        for m in report["models"]:
            click.echo(f"  {m['model']}: {m['detections']} detections on {m['images_with_detections']}/{len(data)} images")


@main.command("eval")
@annotations_opt
@manifest_opt
@click.option("--rho", type=float, multiple=True, help="IoU threshold; repeat to sweep.")
@click.option("--tau", type=float, multiple=True, help="Confidence threshold; repeat to sweep.")
@click.option("--classes", default=None, help="Comma-separated animal classes.")
@click.option("--consensus-k", type=int, default=None, help="Add a k-model consensus row.")
@click.option("--average", type=click.Choice(["micro", "macro"]), default="micro", show_default=True)
@click.pass_context
@guarded
def eval_cmd(ctx, annotations, manifest, rho, tau, classes, consensus_k, average):
    """Per-model precision, recall and F1 over the whole dataset."""
    data, pool = _load_inputs(annotations, manifest)
    animal = _classes(classes)
    criteria = [EvalCriteria(r, t, animal) for r in (rho or (0.5,)) for t in (tau or (0.5,))]
    rows = criteria_sweep(data, pool, criteria, average, ctx.obj["threads"])
    if consensus_k:
        ids = [rec.image_id for rec in data]
        for crit in criteria:
            fused = consensus_predictions(pool, ids, consensus_k, crit.rho)
            rows.append(SweepRow(fused.model_name, crit, aggregate_metrics(evaluate_set(data, fused, crit), average)))
    out = _out_dir(ctx)
    doc = {"config": ctx.obj["resolved"], "rows": [r.to_dict() for r in rows]}
    _write(out / "eval.json", _dump(doc))
    _write(out / "eval.csv", sweep_to_csv(rows))
    if ctx.obj["json"]:
        click.echo(_dump(doc), nl=False)
    else:
        table = [
            {"model": r.model, "rho": r.criteria.rho, "tau": r.criteria.tau,
             "precision": f"{r.report.precision:.3f}", "recall": f"{r.report.recall:.3f}", "f1": f"{r.report.f1:.3f}"}
            for r in rows
        ]
        click.echo(f"{average}-averaged over {len(data)} images")
        click.echo(_table(table, ["model", "rho", "tau", "precision", "recall", "f1"]))


def _parse_seeds(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(v) for v in str(value).split(",") if v.strip())


@main.command()
@annotations_opt
@manifest_opt
@click.option("--strategy", type=click.Choice(STRATEGIES + ("all",)), default="ucb", show_default=True)
@click.option("--seeds", default="1,2,3,4", show_default=True, help="Comma-separated run seeds.")
@click.option("--split", type=float, default=0.9, show_default=True, help="Training share; 1.0 disables the split.")
@click.option("--C", "C", type=float, default=0.1, show_default=True, help="Exploration constant.")
@click.option("--mode", type=click.Choice(["mean", "cumulative"]), default="mean", show_default=True)
@click.option("--rho", type=float, default=0.5, show_default=True)
@click.option("--tau", type=float, default=0.5, show_default=True)
@click.option("--classes", default=None, help="Comma-separated animal classes.")
@click.option("--consensus-k", type=int, default=2, show_default=True)
@click.option("--scope", type=click.Choice(["train", "all"]), default="train", show_default=True,
              help="Images the brute-force baseline scores.")
@click.option("--average", type=click.Choice(["micro", "macro"]), default="micro", show_default=True)
@click.pass_context
@guarded
def select(ctx, annotations, manifest, strategy, seeds, split, C, mode, rho, tau, classes, consensus_k, scope, average):
    """Run selection strategies and write a report plus a pull trace."""
    data, pool = _load_inputs(annotations, manifest)
    strategies = STRATEGIES if strategy == "all" else (strategy,)
    started = time.perf_counter()
    results = []
    for name in strategies:
        config = RunConfig(
            criteria=EvalCriteria(rho, tau, _classes(classes)), C=C, mode=mode, split_ratio=split,
            seeds=_parse_seeds(seeds), pool_manifest=str(manifest), strategy=name, consensus_k=consensus_k,
            bruteforce_scope=scope, average=average, threads=ctx.obj["threads"],
        )
        results.append(repeat_and_average(config, data, pool))
    elapsed = time.perf_counter() - started

    report = build_report(results, config, len(data))
    report["resolved_options"] = ctx.obj["resolved"]
    out = _out_dir(ctx)
    _write(out / "report.json", _dump(report))
    _write(out / "report.csv", report_to_csv(report))
    _write(out / "trace.jsonl", trace_lines(results))
    _write(out / "timing.json", _dump({"wall_seconds": round(elapsed, 3)}))
    if ctx.obj["json"]:
        click.echo(_dump(report), nl=False)
    else:
        click.echo(_render_report(report))


def _render_report(report: dict) -> str:
    meta = report["dataset"]
    cfg = report["config"]
    head = (f"{meta['images']} images, train {meta['train']} / test {meta['test']}, "
            f"{len(cfg['seeds'])} seeds, mode={cfg['mode']}, C={cfg['C']}")
    cols = ["strategy", "precision", "recall", "f1", "winner", "winner_frequency", "inference_count"]
    return head + "\n" + _table(report_rows(report), cols)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(), default=None, help="Simulation spec JSON.")
@click.option("--arms", type=int, default=None, help="Replace the spec's arms with N ramped arms.")
@click.option("--seed", type=int, default=None, help="Override the scene seed.")
@click.option("--images", type=int, default=None, help="Override the image count.")
@click.pass_context
@guarded
def simulate(ctx, spec_path, arms, seed, images):
    """Write a synthetic COCO corpus: annotations, per-arm results and a manifest."""
    if spec_path:
        try:
            doc = json.loads(Path(spec_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read spec: {exc}", spec_path) from None
        spec = SimulationSpec.from_dict(doc)
    else:
        spec = default_simulation_spec()
    if arms is not None:
        spec = SimulationSpec.from_dict({"scene": spec.to_dict()["scene"], "arm_count": arms})
    if seed is not None or images is not None:
        scene = spec.to_dict()["scene"]
        scene.update({k: v for k, v in (("seed", seed), ("image_count", images)) if v is not None})
        spec = SimulationSpec.from_dict({"scene": scene, "arms": spec.to_dict()["arms"]})
    paths = write_corpus(spec, _out_dir(ctx))
    if ctx.obj["json"]:
        click.echo(_dump({k: str(v) for k, v in paths.items()}), nl=False)
    else:
        click.echo(f"wrote {spec.scene.image_count} images and {len(spec.arms)} arms to {ctx.obj['out']}")


@main.command()
@click.argument("report_path", type=click.Path())
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "markdown"]), default="table", show_default=True)
@click.pass_context
@guarded
def report(ctx, report_path, fmt):
    """Render a saved select report."""
    try:
        doc = json.loads(Path(report_path).read_text(encoding="utf-8"))
        rows = report_rows(doc)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"not a select report: {exc}", report_path) from None
    if fmt == "csv":
        click.echo(report_to_csv(doc), nl=False)
    elif fmt == "markdown":
        cols = ["strategy", "precision", "recall", "f1", "winner"]
        click.echo("| " + " | ".join(cols) + " |")
        click.echo("|" + "---|" * len(cols))
        for r in rows:
            click.echo("| " + " | ".join(str(r[c]) for c in cols) + " |")
    else:
        click.echo(_render_report(doc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

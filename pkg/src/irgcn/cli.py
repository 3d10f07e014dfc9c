"""Command-line pipeline: ingest, induce, train, evaluate, ablate, sweep, synth.

Every artifact-producing command drops a JSON manifest next to its first
output (command, input hashes, config hash, seed, tool version, outputs).
Exit codes: 0 success, 1 runtime failure (the failing stage is named),
2 usage errors.
"""

import functools
import hashlib
import json
import sys
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .boost import TrainConfig, fit_model, history_to_csv
from .errors import DataError, IrgcnError
from .estimator import load_model, save_model
from .evaluate import (
    ablation_run,
    evaluate_model,
    export_embeddings,
    label_sparsity_sweep,
)
from .ingest import (
    build_dataset,
    parse_posts,
    parse_users,
    read_dataset,
    standardize_and_split,
    write_dataset,
)
from .synth import PRESETS, synth_dataset
from .validation import check_views
from .views import induce_all_views, read_views, write_views

_RELATION_TOKENS = {
    "c": "contrastive",
    "contrastive": "contrastive",
    "s": "similar",
    "similar": "similar",
    "ts,as": "similar",
    "r": "reflexive",
    "reflexive": "reflexive",
}


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(command, outputs, inputs, seed=None, config_path=None, config_hash=None):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "config_path": str(config_path) if config_path else None,
        "config_hash": config_hash,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path = f"{outputs[0]}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def stage(name):
    """Convert package errors into exit status 1, naming the failing stage."""

    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except (IrgcnError, OSError) as exc:
                click.echo(f"error in stage '{name}': {exc}", err=True)
                sys.exit(1)

        return wrapper

    return decorator


def _load_config(config_path, seed_override):
    config = TrainConfig.from_file(config_path)
    if seed_override is not None:
        from dataclasses import replace

        config = replace(config, seed=seed_override)
    return config


def _prepare(data_path, views_path, config):
    """Load dataset and views, re-derive the split, verify consistency."""
    ds_raw = read_dataset(data_path)
    train_idx, test_idx, ds = standardize_and_split(
        ds_raw, config.test_fraction, config.seed
    )
    parts, header = read_views(views_path)
    if header["seed"] != config.seed or header["test_fraction"] != config.test_fraction:
        raise DataError(
            f"views were induced with seed={header['seed']} "
            f"test_fraction={header['test_fraction']}, but the config says "
            f"seed={config.seed} test_fraction={config.test_fraction}"
        )
    check_views(parts, ds.n, list(parts))
    return ds, parts, train_idx, test_idx


def _parse_subsets(spec):
    subsets = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        names = []
        for token in chunk.split("+"):
            key = token.strip().lower()
            if key not in _RELATION_TOKENS:
                raise click.BadParameter(
                    f"unknown relation token {token!r} (use C, S or R)"
                )
            names.append(_RELATION_TOKENS[key])
        subsets.append(tuple(dict.fromkeys(names)))
    if not subsets:
        raise click.BadParameter("no subsets given")
    return subsets


@click.group()
@click.version_option(__version__)
def main():
    """Accepted-answer selection with induced clique views and boosted GCNs."""


@main.command("ingest")
@click.option("--posts", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--users", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@stage("ingest")
def ingest_cmd(posts, users, out):
    """Parse a StackExchange dump into the binary dataset container."""
    post_rows, post_skipped = parse_posts(posts)
    user_rows, user_skipped = parse_users(users)
    if not post_rows:
        raise DataError(f"no valid post rows in {posts}")
    ds = build_dataset(post_rows, user_rows)
    write_dataset(ds, out)
    write_manifest("ingest", [out], [posts, users])
    click.echo(
        f"ingested {ds.n} tuples over {len(ds.question_spans)} questions "
        f"(skipped rows: {post_skipped} posts, {user_skipped} users)"
    )


@main.command("induce")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--test-fraction", default=0.2, show_default=True, type=float)
@click.option("--delta-trueskill", default=4.0, show_default=True, type=float)
@click.option("--delta-arrival", default=0.95, show_default=True, type=float)
@stage("induce")
def induce_cmd(data, out, seed, test_fraction, delta_trueskill, delta_arrival):
    """Induce the four relational views and write them with summary stats."""
    ds_raw = read_dataset(data)
    train_idx, _test_idx, ds = standardize_and_split(ds_raw, test_fraction, seed)
    parts = induce_all_views(
        ds, train_idx, margin=delta_trueskill, arrival_threshold=delta_arrival
    )
    write_views(parts, out, seed, test_fraction, delta_trueskill, delta_arrival)
    write_manifest("induce", [out], [data], seed=seed)
    for name, part in parts.items():
        hist = part.size_histogram()
        total = sum(size * count for size, count in hist.items())
        click.echo(f"view {name}: {part.n_cliques} cliques over {total} tuples")
        click.echo("  size histogram: " + ", ".join(f"{s}:{c}" for s, c in hist.items()))


@main.command("train")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--views", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@stage("train")
def train_cmd(data, views, config_path, out, seed):
    """Train the boosted model and write a checkpoint plus training history."""
    config = _load_config(config_path, seed)
    ds, parts, train_idx, test_idx = _prepare(data, views, config)
    model, history = fit_model(ds, parts, train_idx, config, val_idx=test_idx)
    save_model(model, out)
    history_path = f"{out}.history.csv"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(history_to_csv(history, model.relation_names))
    write_manifest(
        "train", [out, history_path], [data, views, config_path],
        seed=config.seed, config_path=config_path, config_hash=config.config_hash(),
    )
    last = history[-1] if history else {}
    click.echo(
        f"trained {config.epochs} epochs; "
        f"final train acc {last.get('train_acc', float('nan')):.4f}, "
        f"val acc {last.get('val_acc', float('nan')):.4f}"
    )


@main.command("evaluate")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--views", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", required=True, type=click.Path(dir_okay=False))
@click.option("--embeddings", default=None, type=click.Path(dir_okay=False),
              help="Optionally export per-strategy embeddings as CSV.")
@stage("evaluate")
def evaluate_cmd(model_path, data, views, report, embeddings):
    """Evaluate a checkpoint on the held-out questions."""
    model = load_model(model_path)
    ds, parts, _train_idx, test_idx = _prepare(data, views, model.config)
    result = evaluate_model(model, ds, parts, test_idx)
    with open(report, "w", encoding="utf-8") as fh:
        fh.write(result.to_csv())
    outputs = [report]
    if embeddings:
        rows = export_embeddings(model, ds, parts, embeddings)
        outputs.append(embeddings)
        click.echo(f"exported {rows} embedding rows to {embeddings}")
    write_manifest(
        "evaluate", outputs, [model_path, data, views],
        seed=model.config.seed, config_hash=model.config.config_hash(),
    )
    click.echo(result.summary())


@main.command("ablate")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--views", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--subsets", default="C;S;R;S+R;C+R;C+S;C+S+R", show_default=True,
              help="Semicolon-separated relation subsets, e.g. 'C;C+S;C+S+R'.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@stage("ablate")
def ablate_cmd(data, views, config_path, subsets, out, seed):
    """Train and evaluate the model restricted to relation-type subsets."""
    config = _load_config(config_path, seed)
    ds, parts, train_idx, test_idx = _prepare(data, views, config)
    reports = ablation_run(ds, parts, train_idx, test_idx, config, _parse_subsets(subsets))
    lines = ["subset,accuracy,mrr,seed,config_hash"]
    for label, rep in reports.items():
        lines.append(f"{label},{rep.accuracy!r},{rep.mrr!r},{rep.seed},{rep.config_hash}")
        click.echo(f"{label}: acc {rep.accuracy:.4f}, mrr {rep.mrr:.4f}")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(
        "ablate", [out], [data, views, config_path],
        seed=config.seed, config_path=config_path, config_hash=config.config_hash(),
    )


@main.command("sweep-sparsity")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--views", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--rates", required=True, help="Comma-separated label rates in (0, 1].")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@stage("sweep-sparsity")
def sweep_cmd(data, views, config_path, rates, out, seed):
    """Retrain at reduced training-label rates and record test metrics."""
    config = _load_config(config_path, seed)
    ds, parts, train_idx, test_idx = _prepare(data, views, config)
    rate_list = [float(r) for r in rates.split(",") if r.strip()]
    results = label_sparsity_sweep(ds, parts, train_idx, test_idx, config, rate_list)
    lines = ["rate,labeled_questions,accuracy,mrr,seed,config_hash"]
    for rate in rate_list:
        if rate not in results:
            continue
        rep, n_label = results[rate]
        lines.append(
            f"{rate!r},{n_label},{rep.accuracy!r},{rep.mrr!r},{rep.seed},{rep.config_hash}"
        )
        click.echo(f"rate {rate}: {n_label} labeled questions, acc {rep.accuracy:.4f}")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(
        "sweep-sparsity", [out], [data, views, config_path],
        seed=config.seed, config_path=config_path, config_hash=config.config_hash(),
    )


@main.command("synth")
@click.option("--preset", required=True, type=click.Choice(PRESETS))
@click.option("--questions", default=1000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@stage("synth")
def synth_cmd(preset, questions, seed, out):
    """Generate a synthetic dataset in the binary container format."""
    ds = synth_dataset(preset, questions, seed)
    write_dataset(ds, out)
    write_manifest("synth", [out], [], seed=seed)
    prior = float(np.mean(ds.y == -1))
    click.echo(
        f"wrote {ds.n} tuples over {len(ds.question_spans)} questions "
        f"(majority-class rate {max(prior, 1 - prior):.3f})"
    )


if __name__ == "__main__":
    main()

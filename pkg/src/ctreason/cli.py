"""Command-line entry points: synth, train, eval, infer, and the curation
pipeline (filter / prompts / generate / serve).

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .curation.generate import ClientConfig, HttpGenerationClient, MockGenerationClient
from .curation.pipeline import run_filter, run_generate, run_prompts
from .data import load_png16, load_split_samples, save_mask_png
from .engine import ModelBundle, build_bundle, infer
from .errors import ConfigError, NumericError
from .evaluate import evaluate
from .objectives import LossWeights
from .reasoner import AdapterConfig
from .review.store import ReviewStore
from .synth import SynthConfig, generate_dataset
from .tokenizer import Vocabulary
from .trainer import fit


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(3)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(4)

    return wrapper


def _load_config(path, seed, overrides=()):
    cfg = RunConfig.load(path) if path else RunConfig()
    payload = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        node = payload
        *parents, leaf = dotted.split(".")
        for key in parents:
            if key not in node:
                raise ConfigError(f"unknown config section {key!r} in {dotted!r}")
            node = node[key]
        if leaf not in node:
            raise ConfigError(f"unknown config key {leaf!r} in {dotted!r}")
        node[leaf] = yaml_scalar(raw)
    cfg = RunConfig.from_dict(payload)
    if seed is not None:
        cfg.seed = seed
    return cfg


def yaml_scalar(raw: str):
    import yaml

    return yaml.safe_load(raw)


def _bundle_from_config(cfg: RunConfig, vocab: Vocabulary) -> ModelBundle:
    bundle = build_bundle(
        vocab,
        resolution=cfg.data.resolution,
        hidden_dim=cfg.model.hidden_dim,
        layers=cfg.model.layers,
        heads=cfg.model.heads,
        max_seq_len=cfg.model.max_seq_len,
        patch_size=cfg.model.patch_size,
        channels=cfg.model.channels,
        num_queries=cfg.model.num_queries,
        seed=cfg.seed,
    )
    if cfg.adapter.enabled:
        bundle.reasoner.attach_adapters(
            AdapterConfig(rank=cfg.adapter.rank, alpha=cfg.adapter.alpha,
                          dropout=cfg.adapter.dropout))
    return bundle


def _client_from_config(cfg: RunConfig, mock: bool):
    if mock or not cfg.curation.endpoint:
        return MockGenerationClient()
    return HttpGenerationClient(ClientConfig(
        endpoint=cfg.curation.endpoint, auth_env=cfg.curation.auth_env,
        timeout_s=cfg.curation.timeout_s, concurrency=cfg.curation.concurrency))


@click.group()
def main():
    """Routing-token CT interpretation at desk scale."""


config_opt = click.option("--config", "config_path", type=click.Path(exists=True),
                          default=None, help="YAML run configuration.")
seed_opt = click.option("--seed", type=int, default=None, help="Override the config seed.")
set_opt = click.option("--set", "overrides", multiple=True,
                       help="Override a config value, e.g. --set train.steps=200")


@main.command()
@config_opt
@seed_opt
@set_opt
@click.option("--out", type=click.Path(), required=True, help="Dataset output directory.")
@cli_errors
def synth(config_path, seed, overrides, out):
    """Generate a synthetic dataset with subject-level splits."""
    cfg = _load_config(config_path, seed, overrides)
    sc = SynthConfig(
        resolution=cfg.data.resolution, profile=cfg.data.profile,
        n_subjects=cfg.data.n_subjects, slices_per_subject=cfg.data.slices_per_subject,
        organs_per_slice=cfg.data.organs_per_slice, seed=cfg.seed,
    )
    n = generate_dataset(out, sc)
    cfg.save(Path(out) / "run_config.yaml")
    click.echo(f"wrote {n} slices to {out}")


@main.command()
@config_opt
@seed_opt
@set_opt
@click.option("--data", "data_root", type=click.Path(exists=True), default=None,
              help="Dataset root (defaults to config data.root).")
@click.option("--out", type=click.Path(), required=True, help="Run output directory.")
@cli_errors
def train(config_path, seed, overrides, data_root, out):
    """Train the full model on a dataset split."""
    cfg = _load_config(config_path, seed, overrides)
    root = Path(data_root or cfg.data.root)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "run_config.yaml")

    vocab = Vocabulary.load(root / "vocab.json")
    train_samples = load_split_samples(root, "train")
    try:
        val_samples = load_split_samples(root, "val")
    except FileNotFoundError:
        val_samples = []
    if not train_samples:
        raise ConfigError("train split is empty")

    bundle = _bundle_from_config(cfg, vocab)
    steps = cfg.train.steps or cfg.train.epochs * max(
        1, len(train_samples) // max(1, cfg.train.batch_size))
    fit(bundle, train_samples, steps=steps, batch_size=cfg.train.batch_size,
        weights=cfg.loss_weights(), lr=cfg.optimizer.lr,
        betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
        weight_decay=cfg.optimizer.weight_decay,
        margin_frac=cfg.inference.margin_frac, round2=cfg.train.round2,
        seed=cfg.seed, val_samples=val_samples or train_samples,
        out_dir=out_dir, eval_every=cfg.train.eval_every)
    click.echo(f"training complete; checkpoints in {out_dir}")


@main.command("eval")
@config_opt
@seed_opt
@set_opt
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", "data_root", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--task", type=click.Choice(["seg", "det", "both"]), default="both",
              show_default=True)
@click.option("--closer", is_flag=True, help="Report paired round-1/round-2 metrics.")
@click.option("--maskbox-baselines", is_flag=True,
              help="Also report mask-to-box AP baselines.")
@click.option("--out", type=click.Path(), required=True)
@cli_errors
def cmd_eval(config_path, seed, overrides, checkpoint, data_root, split, task, closer,
             maskbox_baselines, out):
    """Evaluate a checkpoint on a dataset split."""
    cfg = _load_config(config_path, seed, overrides)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "run_config.yaml")

    reasoner, perceiver, vocab, _ = load_checkpoint(checkpoint)
    bundle = ModelBundle(reasoner=reasoner, perceiver=perceiver, vocab=vocab)
    samples = load_split_samples(data_root, split)
    reports = evaluate(bundle, samples, task=task, closer=closer,
                       mask_threshold=cfg.inference.mask_threshold,
                       margin_frac=cfg.inference.margin_frac,
                       maskbox_baselines=maskbox_baselines,
                       max_new=cfg.inference.max_new)
    for name, report in reports.items():
        report.save_json(out_dir / f"report_{name}.json")
        (out_dir / f"report_{name}.txt").write_text(report.to_table())
    if closer:
        r1, r2 = reports["round1"], reports["round2"]
        click.echo(f"round1: dice={r1.mean_dice:.4f} hd95={r1.mean_hd95:.3f}")
        click.echo(f"round2: dice={r2.mean_dice:.4f} hd95={r2.mean_hd95:.3f}")
    else:
        r = reports["round1"]
        click.echo(f"dice={r.mean_dice} hd95={r.mean_hd95} map={r.mean_map}")


@main.command("infer")
@config_opt
@seed_opt
@set_opt
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--query", required=True)
@click.option("--closer", is_flag=True)
@click.option("--out", type=click.Path(), required=True)
@cli_errors
def cmd_infer(config_path, seed, overrides, checkpoint, image_path, query, closer, out):
    """Run one query against one slice; writes text, mask, boxes, round-2."""
    cfg = _load_config(config_path, seed, overrides)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    reasoner, perceiver, vocab, _ = load_checkpoint(checkpoint)
    bundle = ModelBundle(reasoner=reasoner, perceiver=perceiver, vocab=vocab)
    image = load_png16(image_path)
    result = infer(image, query, bundle, obj_threshold=cfg.inference.obj_threshold,
                   closer=closer, mask_threshold=cfg.inference.mask_threshold,
                   margin_frac=cfg.inference.margin_frac, max_new=cfg.inference.max_new)

    (out_dir / "answer.txt").write_text(result.text + "\n")
    summary = {"text": result.text, "notes": result.notes}
    if result.mask is not None:
        save_mask_png(out_dir / "mask.png", result.mask.binary(cfg.inference.mask_threshold))
        summary["mask"] = "mask.png"
    if result.boxes is not None:
        summary["boxes"] = [{"box": list(h.box), "score": h.score} for h in result.boxes]
        with open(out_dir / "boxes.json", "w") as f:
            json.dump(summary["boxes"], f, indent=1)
    if result.round2 is not None:
        save_mask_png(out_dir / "round2_mask.png", result.round2["mask"])
        summary["round2"] = {"region": list(result.round2["region"]),
                             "roi_source": result.round2["roi_source"],
                             "mask": "round2_mask.png"}
    with open(out_dir / "result.json", "w") as f:
        json.dump(summary, f, indent=1)
    click.echo(result.text)


@main.group()
def curate():
    """Dataset curation pipeline stages."""


@curate.command("filter")
@config_opt
@seed_opt
@set_opt
@click.option("--data", "data_root", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True, help="retention.json path")
@cli_errors
def curate_filter(config_path, seed, overrides, data_root, out):
    """Volume-wise slice filtering; writes the retained-slice manifest."""
    cfg = _load_config(config_path, seed, overrides)
    retention = run_filter(data_root, out, iou_thr=cfg.curation.iou_thr,
                           area_eps=cfg.curation.area_eps,
                           small_area_frac=cfg.curation.small_area_frac)
    kept = sum(len(v) for v in retention.values())
    click.echo(f"retained {kept} slices across {len(retention)} subjects -> {out}")


@curate.command("prompts")
@config_opt
@seed_opt
@set_opt
@click.option("--data", "data_root", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True, help="prompts.json path")
@cli_errors
def curate_prompts(config_path, seed, overrides, data_root, out):
    """Derive bounding-box and center-point visual prompts."""
    _load_config(config_path, seed, overrides)
    prompts = run_prompts(data_root, out)
    n = sum(len(s) for subj in prompts.values() for s in subj.values())
    click.echo(f"derived prompts for {n} slice/organ pairs -> {out}")


@curate.command("generate")
@config_opt
@seed_opt
@set_opt
@click.option("--data", "data_root", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True, help="Curation output directory.")
@click.option("--retention", type=click.Path(exists=True), default=None,
              help="retention.json from the filter stage.")
@click.option("--mock/--real", default=True, show_default=True,
              help="Use the deterministic mock client or the configured endpoint.")
@cli_errors
def curate_generate(config_path, seed, overrides, data_root, out, retention, mock):
    """Generate structured appearance descriptions and seed the review queue."""
    cfg = _load_config(config_path, seed, overrides)
    retained = None
    if retention:
        with open(retention) as f:
            retained = json.load(f)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ReviewStore(out_dir / "review.db")
    records = run_generate(data_root, out_dir, _client_from_config(cfg, mock),
                           store=store, retention=retained,
                           template_id=cfg.curation.template_id,
                           max_retries=cfg.curation.max_retries,
                           concurrency=cfg.curation.concurrency)
    bad = sum(1 for r in records if r["status"] == "review_required")
    click.echo(f"generated {len(records)} descriptions ({bad} need review) -> {out}")


@curate.command("serve")
@config_opt
@seed_opt
@set_opt
@click.option("--data", "data_root", type=click.Path(exists=True), required=True)
@click.option("--store", "store_path", type=click.Path(), required=True,
              help="Path to review.db (created if absent).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--mock/--real", default=True, show_default=True)
@cli_errors
def curate_serve(config_path, seed, overrides, data_root, store_path, host, port, mock):
    """Run the review service."""
    import uvicorn

    from .review.service import create_app

    cfg = _load_config(config_path, seed, overrides)
    app = create_app(store_path, dataset_root=data_root,
                     client=_client_from_config(cfg, mock))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

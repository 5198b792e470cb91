"""Command-line interface: generate / train / eval / infer / experiment / plot."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from depthbins import experiments
from depthbins.data import (
    IngestionError,
    TargetGeometry,
    generate_set,
    load_folder_dataset,
    write_sample,
)
from depthbins.metrics import ConfusionMatrix, compute_metrics, confusion_matrix, write_metric_csv
from depthbins.model import ModelConfig, load_checkpoint
from depthbins.pfm import read_pfm, write_pfm
from depthbins.plotting import save_confusion_heatmap, save_depth_png, save_gate_plot
from depthbins.quantize import QuantizationSpec, make_spec
from depthbins.tiling import tiled_inference
from depthbins.train import TrainSchedule, train


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}")


def _fail(exc) -> None:
    raise click.ClickException(str(exc))


def _geometry_from(obj) -> TargetGeometry:
    if obj in (None, "toy"):
        return TargetGeometry.toy()
    if obj == "full":
        return TargetGeometry.full()
    if isinstance(obj, dict):
        return TargetGeometry(**obj)
    raise click.ClickException(f"unknown geometry {obj!r}")


def _spec_from(obj) -> QuantizationSpec:
    if not obj:
        return make_spec()
    return QuantizationSpec(alpha=float(obj["alpha"]), beta=float(obj["beta"]),
                            K=int(obj["K"]))


@click.group()
def main():
    """Depth prediction over log-spaced depth bins: data, training, evaluation."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="JSON: {count, height, width, seed, domain, sparse}")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def generate(config_path, seed, out_dir):
    """Write a synthetic RGB-D dataset folder."""
    cfg = _load_config(config_path)
    try:
        samples = generate_set(
            domain=cfg["domain"],
            count=int(cfg["count"]),
            seed=int(cfg["seed"] if seed is None else seed),
            height=int(cfg.get("height", 96)),
            width=int(cfg.get("width", 128)),
            sparse=bool(cfg.get("sparse", False)),
        )
        for s in samples:
            write_sample(s, out_dir)
    except (KeyError, ValueError) as exc:
        _fail(exc)
    click.echo(f"wrote {len(samples)} samples to {out_dir}")


def _gather_samples(data_cfg: dict, key_synth: str, key_folders: str) -> list:
    samples = []
    synth = data_cfg.get(key_synth, {})
    for domain, g in synth.items():
        samples += generate_set(domain, int(g["count"]), int(g["seed"]),
                                int(g.get("height", 96)), int(g.get("width", 128)),
                                sparse=bool(g.get("sparse", False)))
    folders = data_cfg.get(key_folders, {})
    for domain, path in folders.items():
        samples += load_folder_dataset(path, domain)
    return samples


@main.command(name="train")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="JSON with model/schedule/data/geometry/spec sections.")
@click.option("--seed", type=int, default=None, help="Overrides schedule.seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train_cmd(config_path, seed, out_dir):
    """Train a model and write checkpoint.npz + train_log.csv."""
    cfg = _load_config(config_path)
    try:
        model_cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in cfg.get("model", {}).items()})
        sched_kwargs = dict(cfg.get("schedule", {}))
        if seed is not None:
            sched_kwargs["seed"] = seed
        schedule = TrainSchedule(**sched_kwargs)
        geometry = _geometry_from(cfg.get("geometry"))
        spec = _spec_from(cfg.get("spec"))
        data_cfg = cfg.get("data", {})
        train_samples = _gather_samples(data_cfg, "synthetic", "folders")
        if not train_samples:
            raise ValueError("config declares no training data")
        val_samples = _gather_samples(data_cfg, "val_synthetic", "val_folders")
        val_sets = {}
        for s in val_samples:
            val_sets.setdefault(s.domain, []).append(s)
        _, history = train(model_cfg, schedule, train_samples,
                           val_sets=val_sets or None, spec=spec, geometry=geometry,
                           out_dir=out_dir, augment=bool(cfg.get("augment", True)),
                           val_every=int(cfg.get("val_every", 1)))
    except (ValueError, IngestionError) as exc:
        _fail(exc)
    click.echo(f"trained {schedule.total_epochs} epochs; "
               f"final loss {history[-1]['train_loss']:.4f}; artifacts in {out_dir}")


def _predictions_from_folder(preds_dir, samples) -> list:
    preds = []
    for s in samples:
        path = Path(preds_dir) / f"{s.id}.depth.pfm"
        if not path.exists():
            raise IngestionError(f"missing prediction {path}")
        depth, _ = read_pfm(path)
        if depth.shape != s.depth.shape:
            raise IngestionError(f"{path}: prediction shape {depth.shape} does not "
                                 f"match ground truth {s.depth.shape}")
        preds.append(depth.astype(np.float64))
    return preds


@main.command(name="eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Optional JSON: {spec: {...}, tile_width: int}")
@click.option("--seed", type=int, default=None, help="Unused; accepted for uniformity.")
@click.option("--ckpt", type=click.Path(exists=True), default=None)
@click.option("--preds", "preds_dir", type=click.Path(exists=True), default=None,
              help="Folder of <id>.depth.pfm predictions instead of a checkpoint.")
@click.option("--indoor", "indoor_dir", type=click.Path(exists=True), default=None)
@click.option("--outdoor", "outdoor_dir", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def eval_cmd(config_path, seed, ckpt, preds_dir, indoor_dir, outdoor_dir, out_dir):
    """Evaluate a checkpoint or a prediction folder against RGB-D folders."""
    cfg = _load_config(config_path)
    if (ckpt is None) == (preds_dir is None):
        _fail("exactly one of --ckpt and --preds is required")
    try:
        samples = []
        if indoor_dir:
            samples += load_folder_dataset(indoor_dir, "indoor")
        if outdoor_dir:
            samples += load_folder_dataset(outdoor_dir, "outdoor")
        if not samples:
            raise ValueError("no evaluation data: pass --indoor and/or --outdoor")
        spec = _spec_from(cfg.get("spec"))

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if ckpt is not None:
            net, extra = load_checkpoint(ckpt)
            spec = _spec_from(cfg.get("spec") or extra.get("spec"))
            geometry = _geometry_from(cfg.get("geometry") or extra.get("geometry"))
            tile_width = int(cfg.get("tile_width") or extra.get("tile_width")
                             or geometry.net_width)
            from depthbins.train import evaluate

            result = evaluate(net, samples, spec, geometry, tile_width)
            reports = dict(result["per_domain"])
            reports["combined"] = result["combined"]
            cm = result["confusion"]
        else:
            preds = _predictions_from_folder(preds_dir, samples)
            gts = [s.depth for s in samples]
            masks = [s.valid for s in samples]
            reports = {"combined": compute_metrics(preds, gts, masks)}
            cm = confusion_matrix(preds, gts, masks, spec)

        write_metric_csv(out_dir / "metrics.csv", reports)
        (out_dir / "metrics.json").write_text(json.dumps(
            {k: json.loads(v.to_json()) for k, v in reports.items()}, indent=2) + "\n")
        cm.write_csv(out_dir / "confusion.csv")
        save_confusion_heatmap(cm, out_dir / "confusion.png")
    except (ValueError, IngestionError) as exc:
        _fail(exc)
    click.echo(f"evaluated {len(samples)} images; combined absRel "
               f"{reports['combined'].absRel:.4f}; reports in {out_dir}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Optional JSON: {spec: {...}, geometry: ..., tile_width: int}")
@click.option("--seed", type=int, default=None, help="Unused; accepted for uniformity.")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output PFM depth map.")
@click.option("--color", "color_path", type=click.Path(), default=None,
              help="Optional color-mapped PNG.")
@click.option("--domain", type=click.Choice(["indoor", "outdoor"]), default="outdoor",
              help="Color convention for --color.")
def infer(config_path, seed, ckpt, image_path, out_path, color_path, domain):
    """Predict a depth map for one RGB image."""
    from PIL import Image

    cfg = _load_config(config_path)
    try:
        net, extra = load_checkpoint(ckpt)
        spec = _spec_from(cfg.get("spec") or extra.get("spec"))
        geometry = _geometry_from(cfg.get("geometry") or extra.get("geometry"))
        tile_width = int(cfg.get("tile_width") or extra.get("tile_width")
                         or geometry.net_width)
        rgb = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float64) / 255.0
        depth = tiled_inference(net, rgb, spec, tile_width,
                                (geometry.net_height, geometry.net_width))
        write_pfm(out_path, depth.astype(np.float32))
        if color_path:
            save_depth_png(depth, color_path, domain)
    except (ValueError, IngestionError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {out_path} ({depth.shape[0]}x{depth.shape[1]})")


@main.command()
@click.argument("kind", type=click.Choice(experiments.EXPERIMENT_KINDS))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Optional JSON of experiment knobs (counts, epochs, widths, seeds).")
@click.option("--seed", type=int, default=None,
              help="Run a single seed instead of the configured tuple.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def experiment(kind, config_path, seed, out_dir):
    """Run a report-producing experiment at toy scale."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg["seeds"] = [seed]
    try:
        exp = experiments.ExperimentConfig.from_json(json.dumps(cfg))
        experiments.run_experiment(kind, exp, out_dir)
    except (ValueError, IngestionError) as exc:
        _fail(exc)
    click.echo(f"experiment {kind} written under {Path(out_dir) / kind}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Unused; accepted for uniformity.")
@click.option("--seed", type=int, default=None, help="Unused; accepted for uniformity.")
@click.option("--kind", type=click.Choice(["confusion", "gates", "depth"]), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--domain", type=click.Choice(["indoor", "outdoor"]), default="outdoor")
def plot(config_path, seed, kind, input_path, out_path, domain):
    """Render a saved artifact (confusion CSV, gates CSV, depth PFM) to PNG."""
    try:
        if kind == "confusion":
            save_confusion_heatmap(ConfusionMatrix.read_csv(input_path), out_path)
        elif kind == "gates":
            gate_sets: dict = {}
            with open(input_path) as f:
                f.readline()
                for line in f:
                    parts = line.strip().split(",")
                    if len(parts) < 3:
                        continue
                    input_id, block = parts[0], int(parts[1])
                    vals = [float(v) for v in parts[2:]]
                    gate_sets.setdefault(input_id, {})[block] = vals
            ordered = {k: [v[b] for b in sorted(v)] for k, v in gate_sets.items()}
            save_gate_plot(ordered, out_path)
        else:
            depth, _ = read_pfm(input_path)
            save_depth_png(depth, out_path, domain, valid=depth > 0)
    except (ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    sys.exit(main())

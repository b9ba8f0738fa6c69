"""
Command-line surface of the Beamsight workbench.

Subcommands: gen-data, train, eval, fewshot, inspect. Every command that
produces outputs writes the resolved run configuration next to them.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ai_engine.beam_model import DatasetFeatures
from ai_engine.model_factory import ModelFactory, create_model
from ai_engine.preprocessing import Vocab
from models.config import ModelConfig, ModelKind, RunConfig, load_run_config, parse_set_args
from models.dataset import SplitTag
from models.errors import BeamsightError, ConfigError, DataIntegrityError
from optimization.few_shot import few_shot_protocol
from optimization.trainer import checkpoint_manifest, evaluate, train
from simulation.channel_simulator import codebook_hash, dft_codebook
from simulation.dataset_generator import audit_labels, generate_dataset, split_dataset
from simulation.scene_simulator import build_scene
from utils.serialization import (
    artifact_kind, load_checkpoint, load_dataset, parameter_inventory, read_tensor, save_dataset,
)

logger = logging.getLogger("beamsight")

RESOLVED_CONFIG = "resolved_config.json"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _resolve_config(args: argparse.Namespace, extra: Optional[Dict] = None) -> RunConfig:
    overrides = parse_set_args(getattr(args, "set", None))
    overrides.update(extra or {})
    return load_run_config(args.config, overrides=overrides, preset=getattr(args, "scene", None))


def _prepare_out_dir(path: Path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _codebook(cfg: RunConfig):
    return dft_codebook(cfg.array.geometry(), (cfg.array.oversampling_h, cfg.array.oversampling_v))


def _check_provenance(manifest: Dict, cfg: RunConfig) -> None:
    expected = codebook_hash(_codebook(cfg))
    if manifest.get("codebook_hash") != expected:
        raise DataIntegrityError(
            f"dataset codebook hash {manifest.get('codebook_hash')} does not match the run's codebook {expected}"
        )


def _features(ds, model_cfg: ModelConfig) -> DatasetFeatures:
    return DatasetFeatures.from_dataset(ds, Vocab(model_cfg.vocab), model_cfg.L_p)


def _split_list(raw: str, cast) -> List:
    try:
        return [cast(item) for item in raw.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse list '{raw}': {e}") from e


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    """Generate, label, split and write a dataset directory."""
    extra = {}
    if args.seed is not None:
        extra["data.seed"] = args.seed
    if args.samples is not None:
        extra["data.max_samples"] = args.samples
    cfg = _resolve_config(args, extra)
    out = _prepare_out_dir(args.out, args.force)

    seed = cfg.data.seed
    scene = build_scene(cfg.scene, seed)
    cb = _codebook(cfg)
    ds = generate_dataset(
        scene,
        [t.trajectory() for t in cfg.data.trajectories],
        cfg.grid.grid(),
        cfg.array.geometry(),
        cb,
        cfg.data.sample_interval,
        seed=seed,
        render=cfg.render,
        max_samples=cfg.data.max_samples,
    )
    split_dataset(ds, cfg.data.ratios, seed)
    ds.manifest["config"] = cfg.model_dump(mode="json")
    save_dataset(ds, out)
    cfg.save(out / RESOLVED_CONFIG)

    counts = ds.split_counts()
    print(f"✅ Generated {len(ds)} samples in {out}")
    print(f"   Split: train {counts['train']} / val {counts['val']} / test {counts['test']}")
    print(f"   NLoS fraction: {ds.manifest['nlos_fraction']:.1%}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train one architecture on a dataset and write checkpoints and reports."""
    extra = {}
    if args.model is not None:
        extra["model.kind"] = args.model
    if args.epochs is not None:
        extra["train.epochs"] = args.epochs
    if args.seed is not None:
        extra["train.seed"] = args.seed
    cfg = _resolve_config(args, extra)

    ds = load_dataset(args.dataset)
    _check_provenance(ds.manifest, cfg)
    out = Path(args.out)
    if args.resume is None:
        out = _prepare_out_dir(out, args.force)
    else:
        out.mkdir(parents=True, exist_ok=True)

    features = _features(ds, cfg.model)
    image_shape = tuple(ds.manifest["view_shape"])
    # Same rule as a few-shot cell: the run seed also seeds initialization.
    model = create_model(cfg.model, image_shape, seed=cfg.train.seed)
    stats = {"image_stats": ds.image_stats, "position_stats": ds.position_stats}
    meta = checkpoint_manifest(model, image_shape, stats, {"codebook_hash": ds.manifest["codebook_hash"]})

    resume = resume_best = None
    if args.resume is not None:
        resume = load_checkpoint(Path(args.resume) / "checkpoint" / "last")
        best_dir = Path(args.resume) / "checkpoint" / "best"
        resume_best = load_checkpoint(best_dir) if best_dir.exists() else None

    print(f"🏋️ Training {cfg.model.kind.value} for {cfg.train.epochs} epochs "
          f"({model.params.count()} parameters, {model.params.count(trainable_only=True)} trainable)")
    result = train(
        model, features, cfg.train,
        checkpoint_dir=out / "checkpoint", checkpoint_meta=meta,
        resume=resume, resume_best=resume_best,
    )
    result.report.save(out / "report.json")
    result.report.save_loss_csv(out / "loss_curve.csv")
    cfg.save(out / RESOLVED_CONFIG)

    print(f"✅ Test Top-1 {result.report.top1:.3f}, Top-3 {result.report.top3:.3f} "
          f"(best epoch {result.best_epoch}, D={result.report.n_samples})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluate a saved checkpoint on one split of a dataset."""
    checkpoint = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    if checkpoint.manifest.get("codebook_hash") not in (None, ds.manifest.get("codebook_hash")):
        raise DataIntegrityError("checkpoint was trained on a different codebook than this dataset")

    model_cfg = ModelConfig.model_validate(checkpoint.manifest["model"])
    model = create_model(model_cfg, tuple(checkpoint.manifest["image_shape"]))
    model.params.restore(checkpoint.tensors)
    model.params.restore({f"buffer:{k}": v for k, v in checkpoint.buffers.items()})

    features = _features(ds, model_cfg)
    report = evaluate(model, features, features.split_indices(SplitTag[args.split.upper()]))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "report.json")
    print(f"📊 {model_cfg.kind.value} on {args.split}: Top-1 {report.top1:.3f}, "
          f"Top-3 {report.top3:.3f} (D={report.n_samples})")
    return 0


def cmd_fewshot(args: argparse.Namespace) -> int:
    """Run the model x ratio x seed few-shot grid."""
    cfg = _resolve_config(args, {"train.epochs": args.epochs} if args.epochs is not None else None)
    ds = load_dataset(args.dataset)
    _check_provenance(ds.manifest, cfg)
    out = _prepare_out_dir(args.out, args.force)

    ratios = _split_list(args.ratios, float)
    seeds = _split_list(args.seeds, int)
    kinds = [ModelKind(k) for k in _split_list(args.models, str)]
    image_shape = tuple(ds.manifest["view_shape"])
    factories = [
        ModelFactory(cfg.model.model_copy(update={"kind": kind}), image_shape) for kind in kinds
    ]
    features = _features(ds, cfg.model)

    print(f"🔬 Few-shot grid: {len(kinds)} models x {len(ratios)} ratios x {len(seeds)} seeds")
    cells, summary = few_shot_protocol(factories, features, cfg.train, ratios, seeds, args.workers)
    cells.to_csv(out / "cells.csv", index=False)
    summary.to_csv(out / "summary.csv", index=False)
    (out / "fewshot.json").write_text(json.dumps(
        {"cells": cells.to_dict(orient="records"), "summary": summary.to_dict(orient="records")},
        indent=2, sort_keys=True,
    ) + "\n")
    cfg.save(out / RESOLVED_CONFIG)

    print(summary.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    return 0


def _inspect_dataset(path: Path, audit: bool) -> None:
    ds = load_dataset(path)
    manifest = ds.manifest
    labels = ds.labels()
    histogram = np.bincount(labels, minlength=ds.codebook_size)
    print(f"📦 Dataset {path}")
    print(f"   Samples: {len(ds)}  views: {manifest['view_shape']}  codebook: {ds.codebook_size}")
    print(f"   Splits: {ds.split_counts()}")
    print(f"   Scene hash: {manifest.get('scene_hash')}  codebook hash: {manifest.get('codebook_hash')}")
    print(f"   NLoS fraction: {manifest.get('nlos_fraction', 0.0):.1%}")
    print("   Label histogram (beam: count):")
    used = pd.Series(histogram, name="count")
    print("   " + ", ".join(f"{beam}:{count}" for beam, count in used[used > 0].items()))

    if audit:
        cfg = RunConfig.model_validate(manifest.get("config", {}))
        mismatched = audit_labels(ds, cfg.grid.grid(), cfg.array.geometry(), _codebook(cfg))
        if mismatched:
            raise DataIntegrityError(f"{len(mismatched)} labels differ from their stored paths, first {mismatched[:5]}")
        print(f"✅ Audit: all {len(ds)} labels match a fresh sweep over their stored paths")


def _inspect_checkpoint(path: Path) -> None:
    checkpoint = load_checkpoint(path)
    inventory = parameter_inventory(checkpoint)
    trainable = inventory[inventory["trainable"]]
    frozen = inventory[~inventory["trainable"]]
    print(f"🧠 Checkpoint {path} ({checkpoint.manifest.get('model', {}).get('kind', '?')}, "
          f"epoch {checkpoint.manifest.get('epoch', '?')})")
    print(f"   Trainable: {int(trainable['size'].sum())} values in {len(trainable)} tensors")
    print(f"   Frozen:    {int(frozen['size'].sum())} values in {len(frozen)} tensors")
    print(inventory.to_string(index=False, float_format=lambda v: f"{v:.4g}"))


def cmd_inspect(args: argparse.Namespace) -> int:
    """Dump a dataset, checkpoint or single tensor file."""
    path = Path(args.path)
    kind = artifact_kind(path)
    if kind == "dataset":
        _inspect_dataset(path, args.audit)
    elif kind == "checkpoint":
        _inspect_checkpoint(path)
    else:
        array = read_tensor(path)
        print(f"🔢 Tensor {path}: shape {array.shape}, norm {np.linalg.norm(array):.6g}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                        help="Override one configuration value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamsight", description="Multimodal beam prediction workbench.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Generate a labeled dataset")
    _add_config_flags(gen)
    gen.add_argument("--out", type=Path, default=Path("runs/dataset"))
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--scene", choices=["urban", "empty", "blockage"], default=None, help="Scene preset")
    gen.add_argument("--samples", type=int, default=None, help="Keep only the first N poses")
    gen.add_argument("--force", action="store_true", help="Overwrite a non-empty output directory")
    gen.set_defaults(handler=cmd_gen_data)

    tr = sub.add_parser("train", help="Train a model on a dataset")
    _add_config_flags(tr)
    tr.add_argument("--dataset", type=Path, required=True)
    tr.add_argument("--out", type=Path, default=Path("runs/train"))
    tr.add_argument("--model", choices=[k.value for k in ModelKind], default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--resume", type=Path, default=None, help="Previous train output directory")
    tr.add_argument("--force", action="store_true")
    tr.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--dataset", type=Path, required=True)
    ev.add_argument("--split", choices=["train", "val", "test"], default="test")
    ev.add_argument("--out", type=Path, default=None)
    ev.set_defaults(handler=cmd_eval)

    fs = sub.add_parser("fewshot", help="Run the few-shot grid")
    _add_config_flags(fs)
    fs.add_argument("--dataset", type=Path, required=True)
    fs.add_argument("--out", type=Path, default=Path("runs/fewshot"))
    fs.add_argument("--ratios", default="0.1,0.2,0.3")
    fs.add_argument("--seeds", default="0,1,2")
    fs.add_argument("--models", default=ModelKind.MLM_BP.value, help="Comma-separated model kinds")
    fs.add_argument("--epochs", type=int, default=None)
    fs.add_argument("--workers", type=int, default=1)
    fs.add_argument("--force", action="store_true")
    fs.set_defaults(handler=cmd_fewshot)

    ins = sub.add_parser("inspect", help="Describe a dataset, checkpoint or tensor file")
    ins.add_argument("path", type=Path)
    ins.add_argument("--audit", action="store_true", help="Recompute every label from stored paths")
    ins.set_defaults(handler=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    logger.info("Running %s", args.command)
    try:
        return args.handler(args)
    except BeamsightError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"❌ Invalid value: {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())

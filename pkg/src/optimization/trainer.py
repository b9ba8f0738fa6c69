"""
Loss, training loop and evaluation for beam predictors.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ai_engine.beam_model import BeamModel, DatasetFeatures
from ai_engine.optimizer import AdamState, adam_step
from ai_engine.tensor import Tape, Tensor, backward, clamp_min, log, mul, pick, tensor_mean
from models.config import TrainConfig
from models.dataset import SplitTag
from models.errors import ContractError, NumericalError
from utils.metrics import EvalReport, build_report
from utils.serialization import Checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
NORMALIZATION_TOL = 1e-6


def cross_entropy(truth, predicted) -> float:
    """
    -(1/M) sum_i P_i log(P_hat_i) for one sample.

    Args:
        truth: One-hot vector of length M
        predicted: Probability vector of length M

    Returns:
        Non-negative loss; probabilities are clamped at 1e-12 before the log
    """
    truth = np.asarray(truth, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if abs(predicted.sum() - 1.0) > NORMALIZATION_TOL:
        raise ContractError(f"predicted probabilities sum to {predicted.sum()}, not 1")
    return float(-(truth * np.log(np.maximum(predicted, PROB_FLOOR))).sum() / len(truth))


def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Batch mean of the per-sample loss for probabilities (B, M) and integer labels."""
    sums = probs.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
        raise ContractError(f"predicted probabilities are not normalized (row sums {sums.min()}..{sums.max()})")
    n_beams = probs.shape[-1]
    picked = clamp_min(pick(probs, labels), PROB_FLOOR)
    return mul(tensor_mean(log(picked)), -1.0 / n_beams)


def evaluate(
    model: BeamModel,
    features: DatasetFeatures,
    indices: Optional[np.ndarray] = None,
    batch_size: int = 64,
) -> EvalReport:
    """
    Top-1/Top-3 accuracy and mean loss over ``indices`` (the test split when None).
    """
    if indices is None:
        indices = features.split_indices(SplitTag.TEST)
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ContractError("cannot evaluate on an empty split")
    preds = model.predict_all(features, indices, batch_size)
    truth = features.labels[indices]
    loss = float(np.mean([
        cross_entropy(np.eye(preds.shape[1])[t], p) for t, p in zip(truth, preds)
    ]))
    return build_report(truth, preds, loss=loss, model=str(model.kind.value))


@dataclass
class TrainResult:
    """Best-validation model state, its test report and the per-epoch history."""
    report: EvalReport
    history: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1
    adam: Optional[AdamState] = None


def checkpoint_manifest(model: BeamModel, image_shape, stats: Dict, extra: Optional[Dict] = None) -> Dict:
    manifest = {
        "model": model.config.model_dump(mode="json"),
        "image_shape": list(image_shape),
        "stats": stats,
        "trainable": sorted(model.params.trainable),
    }
    manifest.update(extra or {})
    return manifest


def _save(directory: Path, model: BeamModel, manifest: Dict, adam: Optional[AdamState] = None) -> None:
    save_checkpoint(
        directory,
        {name: t.data for name, t in model.params.tensors.items()},
        manifest,
        buffers=model.params.buffers,
        adam=adam,
    )


def train(
    model: BeamModel,
    features: DatasetFeatures,
    cfg: TrainConfig,
    train_indices: Optional[np.ndarray] = None,
    checkpoint_dir: Optional[Path] = None,
    checkpoint_meta: Optional[Dict] = None,
    resume: Optional[Checkpoint] = None,
    resume_best: Optional[Checkpoint] = None,
) -> TrainResult:
    """
    Mini-batch Adam training with best-validation model selection.

    Each epoch draws its shuffle and dropout masks from a generator seeded by
    (seed, epoch), so a resumed run repeats the uninterrupted one. During the
    first ``warm_start_epochs`` epochs every tensor updates; afterwards only
    the model's trainable set does.

    Args:
        model: Freshly built (or resumed) model, updated in place
        features: Precomputed inputs of the whole dataset
        cfg: Batch size, learning rate, epochs, seed
        train_indices: Training subset (the train split when None)
        checkpoint_dir: When given, ``best/`` and ``last/`` checkpoints are written
        checkpoint_meta: Extra manifest entries (config, stats) for checkpoints
        resume: Checkpoint of a ``last/`` state to continue from
        resume_best: The matching ``best/`` checkpoint, restored if no later epoch beats it

    Returns:
        TrainResult whose report evaluates the best-validation state on the test split
    """
    if train_indices is None:
        train_indices = features.split_indices(SplitTag.TRAIN)
    train_indices = np.asarray(train_indices, dtype=np.int64)
    val_indices = features.split_indices(SplitTag.VAL)
    if len(train_indices) == 0:
        raise ContractError("training split is empty")
    if len(val_indices) == 0:
        raise ContractError("validation split is empty")

    adam = AdamState(
        learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
    )
    history: List[Dict[str, float]] = []
    start_epoch = 0
    best_top1, best_epoch = -1.0, -1
    if resume is not None:
        model.params.restore(resume.tensors)
        model.params.restore({f"buffer:{k}": v for k, v in resume.buffers.items()})
        if resume.adam is not None:
            adam = resume.adam
            adam.learning_rate = cfg.learning_rate
        history = list(resume.manifest.get("history", []))
        start_epoch = int(resume.manifest.get("epoch", -1)) + 1
        best_top1 = float(resume.manifest.get("best_val_top1", -1.0))
        best_epoch = int(resume.manifest.get("best_epoch", -1))
        logger.info("Resuming at epoch %d", start_epoch)
    best_state = model.params.snapshot()
    if resume_best is not None:
        best_state = {**resume_best.tensors, **{f"buffer:{k}": v for k, v in resume_best.buffers.items()}}

    meta = dict(checkpoint_meta or {})
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(train_indices)
        active = model.params.set_phase(warm=epoch < cfg.warm_start_epochs)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = features.batch(order[start:start + cfg.batch_size])
            with Tape() as tape:
                probs = model.forward(batch, training=True, rng=rng)
                loss = cross_entropy_loss(probs, batch.labels)
            if not loss.is_finite():
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            backward(loss, tape)
            for tensor in active.values():
                # Not reached by this forward pass (adapters off, images unused).
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
            adam_step(active, adam)
            losses.append(loss.item())

        val = evaluate(model, features, val_indices, cfg.batch_size)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_top1": val.top1,
            "val_top3": val.top3,
        }
        history.append(row)
        logger.info(
            "epoch %d: loss %.6f val top1 %.3f top3 %.3f",
            epoch, row["train_loss"], row["val_top1"], row["val_top3"],
        )
        if val.top1 > best_top1:
            best_top1, best_epoch = val.top1, epoch
            best_state = model.params.snapshot()
            if checkpoint_dir is not None:
                _save(Path(checkpoint_dir) / "best", model, {**meta, "epoch": epoch, "best_val_top1": best_top1})
        if checkpoint_dir is not None:
            _save(
                Path(checkpoint_dir) / "last", model,
                {**meta, "epoch": epoch, "history": history, "best_val_top1": best_top1, "best_epoch": best_epoch},
                adam=adam,
            )

    if checkpoint_dir is not None and start_epoch >= cfg.epochs:
        # No epoch ran: the current state is the last one and best_state the best.
        _save(
            Path(checkpoint_dir) / "last", model,
            {**meta, "epoch": start_epoch - 1, "history": history, "best_val_top1": best_top1, "best_epoch": best_epoch},
            adam=adam,
        )

    model.params.set_phase(warm=False)
    model.params.restore(best_state)
    if checkpoint_dir is not None and start_epoch >= cfg.epochs:
        _save(Path(checkpoint_dir) / "best", model, {**meta, "epoch": best_epoch, "best_val_top1": best_top1})
    test_indices = features.split_indices(SplitTag.TEST)
    report = evaluate(model, features, test_indices if len(test_indices) else val_indices, cfg.batch_size)
    report.loss_curve = history
    return TrainResult(report=report, history=history, best_epoch=best_epoch, adam=adam)

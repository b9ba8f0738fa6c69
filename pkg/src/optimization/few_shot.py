"""
Few-shot protocol: train on nested fractions of the training split and
evaluate on the untouched test split, over several seeds.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from ai_engine.beam_model import DatasetFeatures
from ai_engine.model_factory import ModelFactory
from models.config import TrainConfig
from models.dataset import SplitTag
from models.errors import ConfigError
from optimization.trainer import train

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.1, 0.2, 0.3)


def nested_subsets(
    train_indices: np.ndarray, ratios: Sequence[float], seed: int, batch_size: int
) -> Dict[float, np.ndarray]:
    """
    Draw one subset per ratio from a single seeded permutation.

    Smaller ratios take a prefix of the same permutation, so subsets are
    nested. Each subset is returned in dataset order.
    """
    train_indices = np.asarray(train_indices, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(train_indices)
    subsets = {}
    for ratio in ratios:
        if not 0 < ratio <= 1:
            raise ConfigError(f"few-shot ratio must lie in (0, 1], got {ratio}")
        count = int(round(ratio * len(order)))
        if count < batch_size:
            raise ConfigError(
                f"ratio {ratio} keeps {count} of {len(order)} training samples, fewer than batch size {batch_size}"
            )
        subsets[ratio] = np.sort(order[:count])
    return subsets


@dataclass(frozen=True)
class FewShotCell:
    factory: ModelFactory
    features: DatasetFeatures
    train_cfg: TrainConfig
    ratio: float
    seed: int
    indices: np.ndarray


def run_cell(cell: FewShotCell) -> Dict[str, float]:
    """Train one (model, ratio, seed) combination from scratch and report test accuracy."""
    model = cell.factory(cell.seed)
    cfg = cell.train_cfg.model_copy(update={"seed": cell.seed})
    result = train(model, cell.features, cfg, train_indices=cell.indices)
    return {
        "model": cell.factory.kind.value,
        "ratio": cell.ratio,
        "seed": cell.seed,
        "n_train": int(len(cell.indices)),
        "top1": result.report.top1,
        "top3": result.report.top3,
    }


def summarize(cells: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of Top-1/Top-3 per (model, ratio)."""
    summary = cells.groupby(["model", "ratio"], sort=True).agg(
        top1_mean=("top1", "mean"),
        top1_std=("top1", "std"),
        top3_mean=("top3", "mean"),
        top3_std=("top3", "std"),
        n_seeds=("seed", "count"),
    )
    return summary.fillna(0.0).reset_index()


def few_shot_protocol(
    factories: Sequence[ModelFactory],
    features: DatasetFeatures,
    train_cfg: TrainConfig,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seeds: Sequence[int] = (0, 1, 2),
    workers: int = 1,
):
    """
    Run the full model x ratio x seed grid.

    Args:
        factories: One recipe per architecture
        features: Inputs of a split dataset
        train_cfg: Training hyperparameters; the seed is replaced per cell
        ratios: Fractions of the training split to keep
        seeds: Seeds for subset sampling, initialization and shuffling
        workers: Worker processes; 1 runs in-process

    Returns:
        (cells, summary) DataFrames
    """
    train_indices = features.split_indices(SplitTag.TRAIN)
    if len(features.split_indices(SplitTag.TEST)) == 0:
        raise ConfigError("few-shot evaluation needs a non-empty test split")
    subsets = {seed: nested_subsets(train_indices, ratios, seed, train_cfg.batch_size) for seed in seeds}

    grid: List[FewShotCell] = [
        FewShotCell(factory, features, train_cfg, ratio, seed, subsets[seed][ratio])
        for factory in factories for ratio in ratios for seed in seeds
    ]
    logger.info("Running %d few-shot cells on %d worker(s)", len(grid), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, grid))
    else:
        rows = [run_cell(cell) for cell in grid]

    cells = pd.DataFrame(rows, columns=["model", "ratio", "seed", "n_train", "top1", "top3"])
    return cells, summarize(cells)

"""
Top-K accuracy and evaluation reports.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from models.errors import ContractError

DEFAULT_TOP_K = (1, 3)


def _as_indices(truths) -> np.ndarray:
    truths = np.asarray(truths)
    if truths.ndim == 2:
        return np.argmax(truths, axis=1)
    return truths.astype(np.int64)


def top_k_indices(preds: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row; ties go to the lower index."""
    return np.argsort(-np.asarray(preds), axis=1, kind="stable")[:, :k]


def topk_accuracy(truths, preds, k: int) -> float:
    """
    Fraction of samples whose true beam is among the K most probable.

    Args:
        truths: True beam indices (D,) or one-hot rows (D, M)
        preds: Predicted probabilities (D, M)
        k: Number of top beams counted as a hit

    Returns:
        Accuracy in [0, 1]
    """
    preds = np.asarray(preds, dtype=np.float64)
    truth = _as_indices(truths)
    if preds.ndim != 2 or len(preds) != len(truth) or len(truth) == 0:
        raise ContractError(f"need matching non-empty truths and predictions, got {len(truth)} and {preds.shape}")
    n_beams = preds.shape[1]
    if not 1 <= k <= n_beams:
        raise ContractError(f"K must lie in [1, {n_beams}], got {k}")
    hits = (top_k_indices(preds, k) == truth[:, None]).any(axis=1)
    return float(hits.mean())


def confusion_summary(truth: np.ndarray, predicted: np.ndarray, n_beams: int, top: int = 5) -> Dict:
    """Most frequent off-diagonal (true, predicted) pairs and per-beam recall."""
    matrix = confusion_matrix(truth, predicted, labels=np.arange(n_beams))
    off = matrix.copy()
    np.fill_diagonal(off, 0)
    order = np.argsort(-off, axis=None, kind="stable")[:top]
    pairs = [
        {"true": int(i), "predicted": int(j), "count": int(off[i, j])}
        for i, j in zip(*np.unravel_index(order, off.shape)) if off[i, j] > 0
    ]
    support = matrix.sum(axis=1)
    recall = {
        int(beam): float(matrix[beam, beam] / support[beam])
        for beam in np.flatnonzero(support)
    }
    return {"beams_present": int(np.count_nonzero(support)), "most_confused": pairs, "recall": recall}


@dataclass
class EvalReport:
    """Top-K accuracies, loss curve and confusion summary of one evaluation."""
    top_k_accuracy: Dict[int, float]
    n_samples: int
    loss: Optional[float] = None
    loss_curve: List[Dict[str, float]] = field(default_factory=list)
    confusion: Dict = field(default_factory=dict)
    model: str = ""

    @property
    def top1(self) -> float:
        return self.top_k_accuracy.get(1, float("nan"))

    @property
    def top3(self) -> float:
        return self.top_k_accuracy.get(3, float("nan"))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["top_k_accuracy"] = {str(k): v for k, v in self.top_k_accuracy.items()}
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.loss_curve, columns=["epoch", "train_loss", "val_top1", "val_top3"])

    def save_loss_csv(self, path: Path) -> None:
        self.loss_frame().to_csv(path, index=False)


def build_report(
    truth: np.ndarray,
    preds: np.ndarray,
    ks: Sequence[int] = DEFAULT_TOP_K,
    loss: Optional[float] = None,
    model: str = "",
) -> EvalReport:
    """Evaluate predictions at every K not exceeding the codebook size."""
    truth = _as_indices(truth)
    n_beams = preds.shape[1]
    accuracies = {k: topk_accuracy(truth, preds, k) for k in ks if k <= n_beams}
    return EvalReport(
        top_k_accuracy=accuracies,
        n_samples=len(truth),
        loss=loss,
        confusion=confusion_summary(truth, top_k_indices(preds, 1)[:, 0], n_beams),
        model=model,
    )

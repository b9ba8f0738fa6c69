"""
Common interface of the beam predictors: parameter containers, batching and
the shared building blocks every architecture uses.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from ai_engine.preprocessing import Vocab, normalize_positions, preprocess_images, tokenize_position
from ai_engine.tensor import Tensor, add, matmul
from models.config import ModelConfig, ModelKind
from models.dataset import Dataset
from models.errors import DimensionError


@dataclass
class Batch:
    """Model inputs for a group of samples."""
    images: np.ndarray  # (B, N_c, H, W), normalized
    positions: np.ndarray  # (B, 3), normalized
    token_ids: np.ndarray  # (B, L_p)
    labels: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class DatasetFeatures:
    """All model inputs of a dataset, precomputed once and sliced into batches."""
    images: np.ndarray
    positions: np.ndarray
    token_ids: np.ndarray
    labels: np.ndarray
    splits: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, vocab: Vocab, L_p: int) -> "DatasetFeatures":
        positions = ds.positions()
        return cls(
            images=preprocess_images(ds.images(), ds.image_stats),
            positions=normalize_positions(positions, ds.position_stats),
            token_ids=np.stack([tokenize_position(p, vocab, L_p).ids for p in positions]),
            labels=ds.labels(),
            splits=np.array([int(s.split) for s in ds.samples], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def split_indices(self, tag) -> np.ndarray:
        return np.flatnonzero(self.splits == int(tag))

    def batch(self, indices) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        return Batch(
            images=self.images[indices],
            positions=self.positions[indices],
            token_ids=self.token_ids[indices],
            labels=self.labels[indices],
        )


@dataclass
class ModelParams:
    """
    Named weights of one model.

    ``trainable`` names the tensors that keep updating after the warm-start
    phase; everything else is frozen then. ``buffers`` hold non-learned state
    such as batch-norm running statistics.
    """
    tensors: Dict[str, Tensor] = field(default_factory=dict)
    trainable: Set[str] = field(default_factory=set)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.tensors)

    def set_phase(self, warm: bool) -> Dict[str, Tensor]:
        """Flip gradient tracking for a phase and return the tensors Adam should update."""
        active = {}
        for name, tensor in self.tensors.items():
            tensor.requires_grad = warm or name in self.trainable
            tensor.grad = None
            if tensor.requires_grad:
                active[name] = tensor
        return active

    def frozen_names(self) -> List[str]:
        return [name for name in self.tensors if name not in self.trainable]

    def count(self, trainable_only: bool = False) -> int:
        return int(sum(
            t.size for name, t in self.tensors.items()
            if not trainable_only or name in self.trainable
        ))

    def snapshot(self) -> Dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.tensors.items()}
        state.update({f"buffer:{name}": b.copy() for name, b in self.buffers.items()})
        return state

    def restore(self, state: Dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            if name.startswith("buffer:"):
                self.buffers[name[len("buffer:"):]] = value.copy()
                continue
            target = self.tensors[name]
            if target.shape != value.shape:
                raise DimensionError(f"parameter {name} has shape {target.shape}, got {value.shape}")
            target.data = value.copy()


class ParamBuilder:
    """Seeded parameter initialization that records names and trainability."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params = ModelParams()

    def add(self, name: str, value: np.ndarray, trainable: bool) -> Tensor:
        tensor = Tensor(value, requires_grad=True, name=name)
        self.params.tensors[name] = tensor
        if trainable:
            self.params.trainable.add(name)
        return tensor

    def normal(self, name: str, shape, trainable: bool = True, scale: Optional[float] = None) -> Tensor:
        if scale is None:
            scale = 1.0 / np.sqrt(shape[0])
        return self.add(name, self.rng.standard_normal(shape) * scale, trainable)

    def zeros(self, name: str, shape, trainable: bool = True) -> Tensor:
        return self.add(name, np.zeros(shape), trainable)

    def ones(self, name: str, shape, trainable: bool = True) -> Tensor:
        return self.add(name, np.ones(shape), trainable)

    def linear(self, prefix: str, d_in: int, d_out: int, trainable: bool = True, bias: bool = True) -> None:
        self.normal(f"{prefix}.w", (d_in, d_out), trainable)
        if bias:
            self.zeros(f"{prefix}.b", (d_out,), trainable)


def linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    """x W + b for weights stored as (d_in, d_out)."""
    y = matmul(x, params[f"{prefix}.w"])
    bias = params.tensors.get(f"{prefix}.b")
    return add(y, bias) if bias is not None else y


class BeamModel(ABC):
    """A parametric map from a batch of samples to beam probabilities."""

    kind: ModelKind

    def __init__(self, config: ModelConfig, params: ModelParams):
        self.config = config
        self.params = params

    @property
    def codebook_size(self) -> int:
        return self.config.codebook_size

    @abstractmethod
    def forward(self, batch: Batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Beam probabilities of shape (B, M); rows sum to 1."""

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch, training=False).data

    def predict_all(self, features: DatasetFeatures, indices: Iterable[int], batch_size: int = 64) -> np.ndarray:
        indices = np.asarray(list(indices), dtype=np.int64)
        if len(indices) == 0:
            return np.zeros((0, self.codebook_size))
        chunks = [
            self.predict(features.batch(indices[i:i + batch_size]))
            for i in range(0, len(indices), batch_size)
        ]
        return np.concatenate(chunks)

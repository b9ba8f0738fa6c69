"""
Labeled beam-prediction samples and datasets.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional

import numpy as np

from models.channel import PathSet
from models.scene import VehiclePose


class SplitTag(IntEnum):
    """Dataset partition a sample belongs to."""
    TRAIN = 0
    VAL = 1
    TEST = 2
    UNASSIGNED = 255


@dataclass
class Sample:
    """One vehicle pose with its depth views and optimal-beam label."""
    pose: VehiclePose
    views: np.ndarray  # float32, shape (N_c, H_d, W_d)
    label: int
    paths: PathSet = field(default_factory=list)
    split: SplitTag = SplitTag.UNASSIGNED


@dataclass
class Dataset:
    """Ordered samples plus the manifest describing how they were made."""
    samples: List[Sample]
    manifest: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def positions(self) -> np.ndarray:
        return np.stack([np.asarray(s.pose.position, dtype=np.float64) for s in self.samples])

    def images(self, indices: Optional[np.ndarray] = None) -> np.ndarray:
        chosen = self.samples if indices is None else [self.samples[i] for i in indices]
        return np.stack([s.views for s in chosen]).astype(np.float64)

    def split_indices(self, tag: SplitTag) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.samples) if s.split == tag], dtype=np.int64)

    def split_counts(self) -> Dict[str, int]:
        return {tag.name.lower(): int(len(self.split_indices(tag))) for tag in (SplitTag.TRAIN, SplitTag.VAL, SplitTag.TEST)}

    @property
    def codebook_size(self) -> int:
        return int(self.manifest.get("codebook_size", 64))

    @property
    def image_stats(self) -> Dict[str, List[float]]:
        return self.manifest.get("image_stats", {})

    @property
    def position_stats(self) -> Dict[str, List[float]]:
        return self.manifest.get("position_stats", {})

"""
Input preprocessing: position text tokenization, image normalization and patching.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Union

import numpy as np

from models.config import POSITION_VOCAB
from models.errors import ConfigError, DimensionError
from models.scene import DepthView

PAD_ID = 0


class Vocab:
    """Fixed character table; id 0 is the pad token."""

    def __init__(self, characters: str = POSITION_VOCAB):
        self.characters = "".join(dict.fromkeys(characters))
        self._ids = {c: i + 1 for i, c in enumerate(self.characters)}

    def __len__(self) -> int:
        return len(self.characters) + 1

    def encode(self, text: str) -> List[int]:
        unknown = sorted(set(text) - set(self._ids))
        if unknown:
            raise ConfigError(f"characters {unknown} are not in the position vocabulary")
        return [self._ids[c] for c in text]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.characters[i - 1] for i in ids if i != PAD_ID)


@dataclass
class TokenSequence:
    ids: np.ndarray  # int64, length L_p
    text: str


def format_position(position) -> str:
    x, y, z = (float(v) for v in position)
    return f"Position: {x:.2f}, {y:.2f}, {z:.2f}"


def tokenize_position(position, vocab: Vocab, length: int) -> TokenSequence:
    """
    Encode a 3-D position as fixed-length character ids.

    The text is "Position: x, y, z" with two decimals per coordinate,
    right-padded with the pad id. Text longer than ``length`` is an error.
    """
    if not np.all(np.isfinite(np.asarray(position, dtype=np.float64))):
        raise ConfigError(f"cannot tokenize non-finite position {position}")
    text = format_position(position)
    if len(text) > length:
        raise ConfigError(f"position text '{text}' has {len(text)} characters, L_p is {length}")
    ids = np.full(length, PAD_ID, dtype=np.int64)
    ids[:len(text)] = vocab.encode(text)
    return TokenSequence(ids=ids, text=text)


def detokenize(tokens: Union[TokenSequence, Sequence[int]], vocab: Vocab) -> str:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return vocab.decode([int(i) for i in ids])


def _stat_arrays(stats: Dict[str, List[float]], channels: int):
    mean = np.asarray(stats.get("mean", [0.0] * channels), dtype=np.float64)
    std = np.asarray(stats.get("std", [1.0] * channels), dtype=np.float64)
    if mean.shape != (channels,) or std.shape != (channels,):
        raise DimensionError(f"image statistics cover {mean.shape} channels, images have {channels}")
    # A constant channel is only centered.
    std = np.where(std > 0, std, 1.0)
    return mean[:, None, None], std[:, None, None]


def stack_views(views: Union[Sequence[DepthView], np.ndarray]) -> np.ndarray:
    """Stack per-camera depth views into one (N_c, H, W) array."""
    if isinstance(views, np.ndarray):
        return views.astype(np.float64)
    shapes = {v.pixels.shape for v in views}
    if len(shapes) != 1:
        raise DimensionError(f"depth views have different resolutions: {sorted(shapes)}")
    return np.stack([v.pixels for v in views]).astype(np.float64)


def preprocess_images(views, stats: Dict[str, List[float]]) -> np.ndarray:
    """
    Channelwise mean/std normalization of stacked views.

    Args:
        views: DepthViews of one sample, or an array (..., N_c, H, W)
        stats: {"mean": [...], "std": [...]} per camera

    Returns:
        float64 array of the same layout
    """
    images = stack_views(views)
    mean, std = _stat_arrays(stats, images.shape[-3])
    return (images - mean) / std


def denormalize_images(images: np.ndarray, stats: Dict[str, List[float]]) -> np.ndarray:
    mean, std = _stat_arrays(stats, images.shape[-3])
    return images * std + mean


def normalize_positions(positions: np.ndarray, stats: Dict[str, List[float]]) -> np.ndarray:
    mean = np.asarray(stats.get("mean", [0.0, 0.0, 0.0]), dtype=np.float64)
    std = np.asarray(stats.get("std", [1.0, 1.0, 1.0]), dtype=np.float64)
    return (np.asarray(positions, dtype=np.float64) - mean) / np.where(std > 0, std, 1.0)


def extract_patches(images: np.ndarray, patch_size: int) -> np.ndarray:
    """
    Cut (B, N_c, H, W) images into non-overlapping square patches.

    Returns:
        Array (B, N_c * H/p * W/p, p*p), camera-major then row-major
    """
    batch, channels, height, width = images.shape
    if height % patch_size or width % patch_size:
        raise DimensionError(f"image {height}x{width} is not divisible by patch size {patch_size}")
    rows, cols = height // patch_size, width // patch_size
    patches = images.reshape(batch, channels, rows, patch_size, cols, patch_size)
    patches = patches.transpose(0, 1, 2, 4, 3, 5)
    return patches.reshape(batch, channels * rows * cols, patch_size * patch_size)

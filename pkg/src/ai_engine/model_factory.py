"""
Model construction by architecture name.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

from ai_engine.baselines import FusionNet, PositionDNN, VisionCNN
from ai_engine.beam_model import BeamModel
from ai_engine.mlm_model import MultimodalBeamModel
from models.config import ModelConfig, ModelKind
from models.errors import ConfigError


def create_model(config: ModelConfig, image_shape: Tuple[int, int, int], seed: Optional[int] = None) -> BeamModel:
    """
    Build a freshly initialized model.

    Args:
        config: Architecture hyperparameters; ``config.kind`` selects the model
        image_shape: (N_c, H, W) of the dataset's depth views
        seed: Initialization seed; ``config.init_seed`` when None

    Returns:
        BeamModel ready for training
    """
    kind = ModelKind(config.kind)
    if kind == ModelKind.MLM_BP:
        return MultimodalBeamModel.build(config, image_shape, seed)
    if kind == ModelKind.DNN_POS:
        return PositionDNN.build(config, seed)
    if kind == ModelKind.CNN_VIS:
        return VisionCNN.build(config, image_shape, seed)
    if kind == ModelKind.FUSION:
        return FusionNet.build(config, image_shape, seed)
    raise ConfigError(f"unknown model kind '{config.kind}'")


@dataclass(frozen=True)
class ModelFactory:
    """Picklable recipe producing a fresh model per seed, for worker processes."""
    config: ModelConfig
    image_shape: Tuple[int, int, int]

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.config.kind)

    def __call__(self, seed: int) -> BeamModel:
        return create_model(self.config, self.image_shape, seed)

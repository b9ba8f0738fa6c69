"""
Small comparison models: a position-only residual MLP, a depth-image CNN and
a two-stage image-plus-position fusion network. All are trained from scratch
and every weight stays trainable.
"""

from typing import Optional

import numpy as np

from ai_engine.beam_model import Batch, BeamModel, ModelParams, ParamBuilder, linear
from ai_engine.tensor import (
    Tensor, add, concat, conv2d, dropout, layer_norm, mul, power, relu,
    softmax_rows, sub, tensor_mean,
)
from models.config import ModelConfig, ModelKind

N_RESIDUAL_BLOCKS = 5
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def batch_norm(
    x: Tensor, params: ModelParams, prefix: str, training: bool, momentum: float = BN_MOMENTUM
) -> Tensor:
    """
    Per-channel batch normalization of a (B, C, H, W) tensor.

    Training normalizes with batch statistics and updates the running
    averages kept in ``params.buffers``; evaluation uses the running values.
    """
    gain = params[f"{prefix}.g"]
    bias = params[f"{prefix}.b"]
    shape = (1, x.shape[1], 1, 1)
    if training:
        mean = tensor_mean(x, axis=(0, 2, 3), keepdims=True)
        centered = sub(x, mean)
        var = tensor_mean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        buffers = params.buffers
        buffers[f"{prefix}.mean"] = (1 - momentum) * buffers[f"{prefix}.mean"] + momentum * mean.data.reshape(-1)
        buffers[f"{prefix}.var"] = (1 - momentum) * buffers[f"{prefix}.var"] + momentum * var.data.reshape(-1)
        normalized = mul(centered, power(add(var, BN_EPS), -0.5))
    else:
        mean = params.buffers[f"{prefix}.mean"].reshape(shape)
        var = params.buffers[f"{prefix}.var"].reshape(shape)
        normalized = mul(sub(x, mean), 1.0 / np.sqrt(var + BN_EPS))
    return add(mul(normalized, gain.reshape(shape)), bias.reshape(shape))


def _build_conv_stack(b: ParamBuilder, in_channels: int, channels) -> None:
    previous = in_channels
    for i, out in enumerate(channels):
        b.normal(f"conv.{i}.w", (out, previous, 3, 3), scale=np.sqrt(2.0 / (previous * 9)))
        b.zeros(f"conv.{i}.b", (out,))
        b.ones(f"conv.{i}.bn.g", (out,))
        b.zeros(f"conv.{i}.bn.b", (out,))
        b.params.buffers[f"conv.{i}.bn.mean"] = np.zeros(out)
        b.params.buffers[f"conv.{i}.bn.var"] = np.ones(out)
        previous = out


def _conv_features(
    model: BeamModel, images: np.ndarray, training: bool, rng: Optional[np.random.Generator]
) -> Tensor:
    """Three stride-2 conv blocks and global average pooling: (B, N_c, H, W) -> (B, C)."""
    p = model.params
    x = Tensor(images)
    for i in range(len(model.config.cnn_channels)):
        x = conv2d(x, p[f"conv.{i}.w"], p[f"conv.{i}.b"], stride=2, padding=1)
        x = relu(batch_norm(x, p, f"conv.{i}.bn", training))
        x = dropout(x, model.config.dropout, rng, training)
    return tensor_mean(x, axis=(2, 3))


class PositionDNN(BeamModel):
    """Normalized position through five pre-norm residual linear blocks."""

    kind = ModelKind.DNN_POS

    @classmethod
    def build(cls, config: ModelConfig, seed: Optional[int] = None) -> "PositionDNN":
        b = ParamBuilder(config.init_seed if seed is None else seed)
        width = config.baseline_width
        b.linear("input", 3, width)
        for i in range(N_RESIDUAL_BLOCKS):
            b.ones(f"block.{i}.ln.g", (width,))
            b.zeros(f"block.{i}.ln.b", (width,))
            b.linear(f"block.{i}.fc", width, width)
        b.ones("ln_f.g", (width,))
        b.zeros("ln_f.b", (width,))
        b.linear("out", width, config.codebook_size)
        params = b.params
        params.trainable = set(params.tensors)
        return cls(config, params)

    def forward(self, batch: Batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        p = self.params
        h = linear(Tensor(batch.positions), p, "input")
        for i in range(N_RESIDUAL_BLOCKS):
            normed = layer_norm(h, p[f"block.{i}.ln.g"], p[f"block.{i}.ln.b"])
            h = add(h, relu(linear(normed, p, f"block.{i}.fc")))
        h = layer_norm(h, p["ln_f.g"], p["ln_f.b"])
        return softmax_rows(linear(h, p, "out"))


class VisionCNN(BeamModel):
    """Stacked depth views through conv/batch-norm/ReLU/dropout blocks."""

    kind = ModelKind.CNN_VIS

    @classmethod
    def build(cls, config: ModelConfig, image_shape, seed: Optional[int] = None) -> "VisionCNN":
        b = ParamBuilder(config.init_seed if seed is None else seed)
        _build_conv_stack(b, image_shape[0], config.cnn_channels)
        b.linear("out", config.cnn_channels[-1], config.codebook_size)
        params = b.params
        params.trainable = set(params.tensors)
        return cls(config, params)

    def forward(self, batch: Batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        features = _conv_features(self, batch.images, training, rng)
        return softmax_rows(linear(features, self.params, "out"))


class FusionNet(BeamModel):
    """
    CNN image features concatenated with the normalized position, then a
    two-hidden-layer MLP. With ``use_images`` off the image features are
    zeroed and the network reduces to a position-only predictor.
    """

    kind = ModelKind.FUSION

    def __init__(self, config: ModelConfig, params: ModelParams):
        super().__init__(config, params)
        self.use_images = True

    @classmethod
    def build(cls, config: ModelConfig, image_shape, seed: Optional[int] = None) -> "FusionNet":
        b = ParamBuilder(config.init_seed if seed is None else seed)
        _build_conv_stack(b, image_shape[0], config.cnn_channels)
        width = config.baseline_width
        b.linear("mlp.0", config.cnn_channels[-1] + 3, width)
        b.linear("mlp.1", width, width)
        b.linear("out", width, config.codebook_size)
        params = b.params
        params.trainable = set(params.tensors)
        return cls(config, params)

    def forward(self, batch: Batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        if self.use_images:
            features = _conv_features(self, batch.images, training, rng)
        else:
            features = Tensor(np.zeros((len(batch), self.config.cnn_channels[-1])))
        h = concat([features, Tensor(batch.positions)], axis=1)
        h = relu(linear(h, self.params, "mlp.0"))
        h = relu(linear(h, self.params, "mlp.1"))
        return softmax_rows(linear(h, self.params, "out"))

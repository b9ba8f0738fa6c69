"""
Multimodal beam predictor: a patch-embedding image encoder with LoRA-adapted
attention feeding a decoder-only transformer over image and position-text
tokens, followed by a pooled MLP head over the codebook.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ai_engine.beam_model import Batch, BeamModel, ModelParams, ParamBuilder, linear
from ai_engine.preprocessing import Vocab, extract_patches
from ai_engine.tensor import (
    Tensor, add, concat, gelu, layer_norm, matmul, mul, reshape, rms_norm,
    rotate_pairs, softmax_rows, swap_last, swiglu, swish, take_rows,
    tensor_mean, transpose,
)
from models.config import ModelConfig, ModelKind
from models.errors import ConfigError


# ---------------------------------------------------------------------------
# LoRA
# ---------------------------------------------------------------------------

@dataclass
class LoraAdapter:
    """Frozen base weight W_0 (d_out x d_in) with a rank-r update (alpha/r) B A."""
    base: Tensor
    a: Tensor  # (r, d_in)
    b: Tensor  # (d_out, r)
    rank: int
    alpha: float

    def __post_init__(self):
        d_out, d_in = self.base.shape
        if self.rank > min(d_out, d_in):
            raise ConfigError(f"LoRA rank {self.rank} exceeds layer width {min(d_out, d_in)}")
        if self.a.shape != (self.rank, d_in) or self.b.shape != (d_out, self.rank):
            raise ConfigError(
                f"LoRA factors {self.a.shape}, {self.b.shape} do not fit base {self.base.shape} at rank {self.rank}"
            )

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def effective_weight(self) -> np.ndarray:
        return self.base.data + self.scale * self.b.data @ self.a.data


def lora_linear(x: Tensor, adapter: LoraAdapter, enabled: bool = True) -> Tensor:
    """y = x W_0^T + (alpha/r) (x A^T) B^T, without forming the summed weight."""
    y = matmul(x, swap_last(adapter.base))
    if not enabled:
        return y
    update = matmul(matmul(x, swap_last(adapter.a)), swap_last(adapter.b))
    return add(y, mul(update, adapter.scale))


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def rope_apply(x: Tensor, positions: np.ndarray, base: float = 10000.0) -> Tensor:
    """
    Rotate consecutive coordinate pairs of ``x`` (..., S, d) by position.

    Args:
        x: Queries or keys of one or more heads
        positions: Integer position of each of the S rows
        base: Frequency base
    """
    head_dim = x.shape[-1]
    if head_dim % 2:
        raise ConfigError(f"rotary embeddings need an even head dimension, got {head_dim}")
    freqs = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return rotate_pairs(x, angles)


def causal_mask(n: int) -> np.ndarray:
    """-inf strictly above the diagonal, zero elsewhere."""
    return np.triu(np.full((n, n), -np.inf), k=1)


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False, scale: Optional[float] = None) -> Tensor:
    """
    softmax(q k^T * scale + mask) v over the last two axes.

    Args:
        q, k, v: (..., S, d) tensors sharing the sequence length
        causal: Mask out keys after the query position
        scale: Logit scale; 1/sqrt(d) when None
    """
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    logits = mul(matmul(q, swap_last(k)), scale)
    if causal:
        logits = add(logits, causal_mask(q.shape[-2]))
    return matmul(softmax_rows(logits), v)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    batch, seq, width = x.shape
    return transpose(reshape(x, (batch, seq, n_heads, width // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, seq, head_dim = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (batch, seq, heads * head_dim))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class MultimodalBeamModel(BeamModel):
    """
    Position text and multi-view depth images in, beam probabilities out.

    Image patches are embedded and run through a bidirectional encoder whose
    Q/K/V projections carry LoRA adapters; an aligner maps them to the decoder
    width. Image tokens followed by position-text token embeddings form the
    decoder sequence, which passes causal RoPE attention and SwiGLU blocks
    with RMSNorm. The final normalized sequence is mean-pooled and projected
    by a three-hidden-layer MLP onto the codebook.
    """

    kind = ModelKind.MLM_BP

    def __init__(self, config: ModelConfig, params: ModelParams, n_image_tokens: int):
        super().__init__(config, params)
        self.n_image_tokens = n_image_tokens
        self.lora_enabled = True

    # -- construction -----------------------------------------------------

    @classmethod
    def build(cls, config: ModelConfig, image_shape, seed: Optional[int] = None) -> "MultimodalBeamModel":
        """
        Initialize all weights.

        Args:
            config: Architecture hyperparameters
            image_shape: (N_c, H, W) of the depth views
            seed: Initialization seed; ``config.init_seed`` when None
        """
        channels, height, width = image_shape
        p = config.patch_size
        if height % p or width % p:
            raise ConfigError(f"view size {height}x{width} is not divisible by patch size {p}")
        n_tokens = channels * (height // p) * (width // p)
        d_v, d_m, r = config.d_v, config.d_m, config.lora_rank
        if r > d_v:
            raise ConfigError(f"LoRA rank {r} exceeds encoder width {d_v}")

        b = ParamBuilder(config.init_seed if seed is None else seed)
        b.linear("patch.proj", p * p, d_v)
        b.normal("patch.pos", (n_tokens, d_v), scale=0.02)

        for i in range(config.n_encoder_blocks):
            pre = f"enc.{i}"
            b.ones(f"{pre}.ln1.g", (d_v,))
            b.zeros(f"{pre}.ln1.b", (d_v,))
            for proj in ("q", "k", "v"):
                b.normal(f"{pre}.attn.{proj}.w0", (d_v, d_v), trainable=False)
                b.normal(f"{pre}.attn.{proj}.lora_a", (r, d_v), scale=1.0 / r)
                b.zeros(f"{pre}.attn.{proj}.lora_b", (d_v, r))
            b.normal(f"{pre}.attn.o.w", (d_v, d_v), trainable=False)
            b.ones(f"{pre}.ln2.g", (d_v,))
            b.zeros(f"{pre}.ln2.b", (d_v,))
            b.linear(f"{pre}.mlp.fc1", d_v, config.encoder_mlp_ratio * d_v, trainable=False)
            b.linear(f"{pre}.mlp.fc2", config.encoder_mlp_ratio * d_v, d_v, trainable=False)
        b.ones("enc.ln_f.g", (d_v,))
        b.zeros("enc.ln_f.b", (d_v,))
        b.linear("aligner", d_v, d_m)

        b.normal("tok.embed", (len(Vocab(config.vocab)), d_m), scale=0.02)

        hidden = config.decoder_ffn_ratio * d_m
        for i in range(config.n_decoder_blocks):
            pre = f"dec.{i}"
            b.ones(f"{pre}.norm1.g", (d_m,))
            for proj in ("q", "k", "v", "o"):
                b.normal(f"{pre}.attn.{proj}.w", (d_m, d_m), trainable=False)
            b.ones(f"{pre}.norm2.g", (d_m,))
            b.normal(f"{pre}.ffn.gate", (d_m, hidden), trainable=False)
            b.normal(f"{pre}.ffn.up", (d_m, hidden), trainable=False)
            b.normal(f"{pre}.ffn.down", (hidden, d_m), trainable=False)
        b.ones("dec.norm_f.g", (d_m,))

        widths = [d_m, d_m, max(d_m // 2, 1), max(d_m // 4, 1)]
        for j in range(3):
            b.linear(f"head.{j}", widths[j], widths[j + 1])
        b.linear("head.out", widths[-1], config.codebook_size)
        return cls(config, b.params, n_tokens)

    def adapter(self, block: int, proj: str) -> LoraAdapter:
        pre = f"enc.{block}.attn.{proj}"
        return LoraAdapter(
            base=self.params[f"{pre}.w0"],
            a=self.params[f"{pre}.lora_a"],
            b=self.params[f"{pre}.lora_b"],
            rank=self.config.lora_rank,
            alpha=self.config.lora_alpha,
        )

    # -- stages -----------------------------------------------------------

    def patch_embed(self, images: np.ndarray) -> Tensor:
        """(B, N_c, H, W) normalized views -> (B, n_image_tokens, d_v)."""
        patches = Tensor(extract_patches(images, self.config.patch_size))
        return add(linear(patches, self.params, "patch.proj"), self.params["patch.pos"])

    def encoder_block(self, x: Tensor, i: int) -> Tensor:
        p, pre = self.params, f"enc.{i}"
        h = layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
        q, k, v = (
            _split_heads(lora_linear(h, self.adapter(i, proj), self.lora_enabled), self.config.n_heads)
            for proj in ("q", "k", "v")
        )
        attended = _merge_heads(attention(q, k, v, causal=False))
        x = add(x, matmul(attended, p[f"{pre}.attn.o.w"]))
        h = layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
        h = linear(gelu(linear(h, p, f"{pre}.mlp.fc1")), p, f"{pre}.mlp.fc2")
        return add(x, h)

    def encoder_forward(self, patch_embeddings: Tensor) -> Tensor:
        """Encoder blocks, final layer norm and aligner: (B, P, d_v) -> (B, P, d_m)."""
        x = patch_embeddings
        for i in range(self.config.n_encoder_blocks):
            x = self.encoder_block(x, i)
        x = layer_norm(x, self.params["enc.ln_f.g"], self.params["enc.ln_f.b"])
        return linear(x, self.params, "aligner")

    def embed_text(self, token_ids: np.ndarray) -> Tensor:
        return take_rows(self.params["tok.embed"], token_ids)

    def decoder_block(self, x: Tensor, i: int) -> Tensor:
        p, pre, cfg = self.params, f"dec.{i}", self.config
        seq = x.shape[1]
        h = rms_norm(x, p[f"{pre}.norm1.g"])
        q, k, v = (_split_heads(matmul(h, p[f"{pre}.attn.{proj}.w"]), cfg.n_heads) for proj in ("q", "k", "v"))
        positions = np.arange(seq)
        q = rope_apply(q, positions, cfg.rope_base)
        k = rope_apply(k, positions, cfg.rope_base)
        scale = 1.0 / np.sqrt(cfg.d_m if cfg.scale_by_model_dim else cfg.d_m // cfg.n_heads)
        attended = _merge_heads(attention(q, k, v, causal=True, scale=scale))
        x = add(x, matmul(attended, p[f"{pre}.attn.o.w"]))
        h = rms_norm(x, p[f"{pre}.norm2.g"])
        return add(x, swiglu(h, p[f"{pre}.ffn.gate"], p[f"{pre}.ffn.up"], p[f"{pre}.ffn.down"]))

    def decode_sequence(self, x: Tensor) -> Tensor:
        """Decoder stack plus final RMSNorm over a (B, S, d_m) sequence."""
        for i in range(self.config.n_decoder_blocks):
            x = self.decoder_block(x, i)
        return rms_norm(x, self.params["dec.norm_f.g"])

    def head(self, pooled: Tensor) -> Tensor:
        h = pooled
        for j in range(3):
            h = swish(linear(h, self.params, f"head.{j}"))
        return softmax_rows(linear(h, self.params, "head.out"))

    def forward(self, batch: Batch, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        image_tokens = self.encoder_forward(self.patch_embed(batch.images))
        text_tokens = self.embed_text(batch.token_ids)
        sequence = self.decode_sequence(concat([image_tokens, text_tokens], axis=1))
        return self.head(tensor_mean(sequence, axis=1))

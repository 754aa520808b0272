"""Pre-norm Transformer encoder and the ViT-style spectral baseline."""
from __future__ import annotations

import numpy as np

from ..autodiff import functional as F
from ..autodiff.layers import Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter
from ..autodiff.tensor import Tensor, concat
from .cnn import ModelOutput, as_input
from .config import VitConfig


class MLP(Module):
    def __init__(self, dim: int, hidden: int, out: int, rng, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, out, rng, dtype=dtype)

    def __call__(self, x: Tensor, p: float = 0.0, active: bool = False, rng=None) -> Tensor:
        return self.fc2(F.dropout(F.gelu(self.fc1(x)), p, active, rng))


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP(dim, dim * mlp_ratio, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, p: float, active: bool, rng) -> Tensor:
        h = self.norm1(x)
        a, _ = self.attn(h, h, h)
        x = x + F.dropout(a, p, active, rng)
        return x + F.dropout(self.mlp(self.norm2(x), p, active, rng), p, active, rng)


def broadcast_batch(param: Tensor, batch: int) -> Tensor:
    """Repeat a ``[1, ...]`` parameter along the batch axis (gradients are summed back)."""
    zeros = Tensor(np.zeros((batch,) + param.shape[1:], dtype=param.dtype))
    return zeros + param


class ViT(Module):
    """Overlapping stride-1 patches, CLS readout, learned positional encodings."""

    kind = "vit"

    def __init__(self, config: VitConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        D = config.dim
        self.patch = Conv1d(1, D, config.patch_size, rng, stride=config.stride, padding=0, dtype=dtype)
        self.cls_token = Parameter(rng.normal(0.0, 0.02, size=(1, 1, D)).astype(dtype))
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, size=(1, config.n_tokens, D)).astype(dtype))
        self.layers = [EncoderLayer(D, config.heads, config.mlp_ratio, rng, dtype) for _ in range(config.depth)]
        self.norm = LayerNorm(D, dtype=dtype)
        self.head = Linear(D, config.output_dim, rng, dtype=dtype)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def encode(self, x: Tensor, active: bool, rng) -> Tensor:
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected input of shape [B, 1, L], got {x.shape}")
        if x.shape[2] < cfg.patch_size:
            raise ValueError(f"input length {x.shape[2]} is shorter than patch size {cfg.patch_size}")
        if x.shape[2] != cfg.input_length:
            raise ValueError(f"expected spectra of length {cfg.input_length}, got {x.shape[2]}")
        tokens = self.patch(x).transpose(0, 2, 1)
        tokens = concat([broadcast_batch(self.cls_token, x.shape[0]), tokens], axis=1)
        h = F.dropout(tokens + self.pos_embed, cfg.dropout, active, rng)
        for layer in self.layers:
            h = layer(h, cfg.dropout, active, rng)
        return self.norm(h)

    def forward(self, x, *, training: bool = False, stochastic: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutput:
        x = as_input(x, self.dtype)
        h = self.encode(x, training or stochastic, rng)
        return ModelOutput(self.head(h[:, 0, :]))

    __call__ = forward

    def loss(self, out: ModelOutput, target, **_) -> Tensor:
        return F.mse_loss(out.mean, target)


def build_vit(config: VitConfig | None = None, seed: int = 42) -> ViT:
    return ViT(config or VitConfig(), np.random.default_rng(seed))


def vit_forward(model: ViT, x, training: bool = False, rng=None) -> Tensor:
    return model(x, training=training, rng=rng).mean

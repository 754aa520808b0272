"""Spectral query transformer: multi-scale patches, per-species queries, band-prior attention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.layers import Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter
from ..autodiff.tensor import Tensor, concat
from ..spectra import SpeciesCatalog, build_wavelength_grid
from .cnn import ModelOutput, as_input, check_input
from .config import SquatConfig
from .transformer import MLP, EncoderLayer, broadcast_batch


@dataclass
class PriorMask:
    """Row-stochastic ``[K, T]`` attention prior and the wavelength of each token."""

    P: np.ndarray
    token_centers: np.ndarray

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "token_centers": self.token_centers.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorMask":
        return cls(np.asarray(d["P"], dtype=np.float64), np.asarray(d["token_centers"], dtype=np.float64))


def build_prior_mask(catalog: SpeciesCatalog, token_centers, width_scale: float = 1.0) -> PriorMask:
    """Normalized sum of Gaussians (sigma = width_scale·half_width) over each species' bands."""
    centers = np.asarray(token_centers, dtype=np.float64)
    if np.any(np.diff(centers) <= 0):
        raise ValueError("token centers must be strictly increasing")
    T = len(centers)
    P = np.empty((len(catalog.names), T))
    for s, name in enumerate(catalog.names):
        row = np.zeros(T)
        for band in catalog.bands.get(name, []):
            sigma = width_scale * band.half_width
            row += np.exp(-0.5 * ((centers - band.center) / sigma) ** 2)
        total = row.sum()
        P[s] = row / total if total > 0 else np.full(T, 1.0 / T)
    return PriorMask(P, centers)


def mix_prior(attn: Tensor, prior: np.ndarray, alpha: Tensor) -> Tensor:
    """A' = (1 − α)·A + α·P, one α per query row.

    ``attn`` is ``[..., K, T]``, ``prior`` is ``[K, T]``, ``alpha`` is ``[K]``.
    """
    a = alpha.reshape(alpha.shape[0], 1)
    P = Tensor(np.asarray(prior, dtype=attn.dtype))
    return attn * (1.0 - a) + P * a


def biased_cross_attention(queries: Tensor, tokens: Tensor, prior, alpha_logits: Tensor,
                           attention: MultiHeadAttention):
    """Queries attend over tokens with each species' attention row mixed toward its prior.

    Returns the projected species embeddings ``[B, K, D]`` and the mixed
    attention ``[B, h, K, T]`` that produced them.
    """
    P = prior.P if isinstance(prior, PriorMask) else np.asarray(prior)
    K, T = queries.shape[1], tokens.shape[1]
    if P.shape != (K, T):
        raise ValueError(f"prior mask shape {P.shape} does not match (queries, tokens) = ({K}, {T})")
    alpha = F.sigmoid(alpha_logits)
    return attention(queries, tokens, tokens, attn_bias_hook=lambda A: mix_prior(A, P, alpha))


class SQuAT(Module):
    kind = "squat"

    def __init__(self, config: SquatConfig, prior: PriorMask, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        D, C = config.dim, config.channels_per_branch
        if prior.P.shape != (config.n_queries, config.input_length):
            raise ValueError(f"prior mask must be {config.n_queries}x{config.input_length}, got {prior.P.shape}")
        self.prior = prior
        self.branches = [Conv1d(1, C, k, rng, padding="same", dtype=dtype) for k in config.patch_sizes]
        self.proj = Linear(C * len(config.patch_sizes), D, rng, dtype=dtype)
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, size=(1, config.input_length, D)).astype(dtype))
        self.layers = [EncoderLayer(D, config.heads, config.mlp_ratio, rng, dtype) for _ in range(config.depth)]
        self.norm = LayerNorm(D, dtype=dtype)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(1, config.n_queries, D)).astype(dtype))
        self.alpha_logits = Parameter(np.full(config.n_queries, config.alpha_logit_init, dtype=dtype))
        self.query_norm = LayerNorm(D, dtype=dtype)
        self.cross_attn = MultiHeadAttention(D, config.heads, rng, dtype=dtype)
        self.interaction = [_InteractionLayer(D, config.heads, rng, dtype) for _ in range(config.interaction_layers)]
        self.head_norm = LayerNorm(D, dtype=dtype)
        self.head = MLP(D, D // 2, 1, rng, dtype=dtype)

    @property
    def dtype(self):
        return self.proj.weight.dtype

    @property
    def alpha(self) -> np.ndarray:
        return F.sigmoid(Tensor(self.alpha_logits.data)).data

    def encode(self, x: Tensor, active: bool, rng) -> Tensor:
        cfg = self.config
        feats = concat([branch(x) for branch in self.branches], axis=1).transpose(0, 2, 1)
        h = self.proj(F.gelu(feats)) + self.pos_embed
        h = F.dropout(h, cfg.dropout, active, rng)
        for layer in self.layers:
            h = layer(h, cfg.dropout, active, rng)
        return self.norm(h)

    def species_embeddings(self, tokens: Tensor):
        q = broadcast_batch(self.queries, tokens.shape[0])
        emb, attn = biased_cross_attention(self.query_norm(q), tokens, self.prior, self.alpha_logits,
                                           self.cross_attn)
        return q + emb, attn

    def forward(self, x, *, training: bool = False, stochastic: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutput:
        """``attention`` in the output is the prior-mixed cross-attention ``[B, h, K, T]``."""
        x = as_input(x, self.dtype)
        check_input(x, self.config.input_length)
        active = training or stochastic
        tokens = self.encode(x, active, rng)
        e, attn = self.species_embeddings(tokens)
        for layer in self.interaction:
            e = layer(e, self.config.dropout, active, rng)
        flux = self.head(self.head_norm(e), self.config.dropout, active, rng)
        return ModelOutput(flux.reshape(x.shape[0], self.config.n_queries), attention=attn)

    __call__ = forward

    def loss(self, out: ModelOutput, target, **_) -> Tensor:
        return F.mse_loss(out.mean, target)


class _InteractionLayer(Module):
    """Residual self-attention across species embeddings."""

    def __init__(self, dim: int, heads: int, rng, dtype=np.float32):
        self.norm = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)

    def __call__(self, e: Tensor, p: float, active: bool, rng) -> Tensor:
        h = self.norm(e)
        a, _ = self.attn(h, h, h)
        return e + F.dropout(a, p, active, rng)


def default_prior(config: SquatConfig, catalog: SpeciesCatalog | None = None, grid=None) -> PriorMask:
    catalog = SpeciesCatalog() if catalog is None else catalog
    grid = build_wavelength_grid() if grid is None else grid
    return build_prior_mask(catalog, grid.points, config.prior_width_scale)


def build_squat(config: SquatConfig | None = None, prior: PriorMask | None = None, seed: int = 42) -> SQuAT:
    config = config or SquatConfig()
    return SQuAT(config, prior or default_prior(config), np.random.default_rng(seed))


def squat_forward(model: SQuAT, x, training: bool = False, stochastic: bool = False, rng=None):
    out = model(x, training=training, stochastic=stochastic, rng=rng)
    return out.mean, out.attention

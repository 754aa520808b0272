"""1-D CNN baseline and its variational (Bayes-by-backprop) counterpart."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import functional as F
from ..autodiff.layers import Conv1d, Linear, Module, VariationalConv1d, VariationalLinear
from ..autodiff.tensor import Tensor
from .config import CnnConfig


@dataclass
class ModelOutput:
    mean: Tensor
    log_var: Tensor | None = None
    attention: Tensor | None = None


def as_input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def check_input(x: Tensor, length: int) -> None:
    if x.ndim != 3 or x.shape[1] != 1:
        raise ValueError(f"expected input of shape [B, 1, {length}], got {x.shape}")
    if x.shape[2] != length:
        raise ValueError(f"expected spectra of length {length}, got {x.shape[2]}")


def pooled_length(length: int, n_blocks: int) -> int:
    for _ in range(n_blocks):
        length //= 2
    return length


class CNN(Module):
    kind = "cnn"

    def __init__(self, config: CnnConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        convs, c_in = [], 1
        for c_out, k in zip(config.filters, config.kernels):
            convs.append(Conv1d(c_in, c_out, k, rng, padding="same", dtype=dtype))
            c_in = c_out
        self.convs = convs
        flat = c_in * pooled_length(config.input_length, len(config.filters))
        fcs, n_in = [], flat
        for n_out in config.fc:
            fcs.append(Linear(n_in, n_out, rng, dtype=dtype))
            n_in = n_out
        self.fcs = fcs
        self.head = Linear(n_in, config.output_dim, rng, dtype=dtype)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def features(self, x: Tensor, training: bool, rng) -> Tensor:
        for conv in self.convs:
            x = F.max_pool1d(F.relu(conv(x)), 2, 2)
        x = x.reshape(x.shape[0], -1)
        for fc in self.fcs:
            x = F.dropout(F.relu(fc(x)), self.config.dropout, training, rng)
        return x

    def forward(self, x, *, training: bool = False, stochastic: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutput:
        """``stochastic`` keeps dropout active at inference (MC dropout)."""
        x = as_input(x, self.dtype)
        check_input(x, self.config.input_length)
        h = self.features(x, training or stochastic, rng)
        return ModelOutput(self.head(h))

    __call__ = forward

    def loss(self, out: ModelOutput, target, **_) -> Tensor:
        return F.mse_loss(out.mean, target)


class BCNN(Module):
    """Same topology as :class:`CNN` with Gaussian weight posteriors and a mean/log-variance head."""

    kind = "bcnn"

    def __init__(self, config: CnnConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        s = config.init_sigma
        convs, c_in = [], 1
        for c_out, k in zip(config.filters, config.kernels):
            convs.append(VariationalConv1d(c_in, c_out, k, rng, padding="same", init_sigma=s, dtype=dtype))
            c_in = c_out
        self.convs = convs
        flat = c_in * pooled_length(config.input_length, len(config.filters))
        fcs, n_in = [], flat
        for n_out in config.fc:
            fcs.append(VariationalLinear(n_in, n_out, rng, init_sigma=s, dtype=dtype))
            n_in = n_out
        self.fcs = fcs
        self.head = VariationalLinear(n_in, 2 * config.output_dim, rng, init_sigma=s, dtype=dtype)

    @property
    def dtype(self):
        return self.head.weight_mu.dtype

    def variational_layers(self):
        return [*self.convs, *self.fcs, self.head]

    def kl(self) -> Tensor:
        total = None
        for layer in self.variational_layers():
            term = layer.kl()
            total = term if total is None else total + term
        return total

    def forward(self, x, *, training: bool = False, stochastic: bool = False,
                rng: np.random.Generator | None = None) -> ModelOutput:
        """Weights are sampled when ``training`` or ``stochastic``; dropout only when ``training``."""
        x = as_input(x, self.dtype)
        check_input(x, self.config.input_length)
        sample = training or stochastic
        for conv in self.convs:
            x = F.max_pool1d(F.relu(conv(x, sample, rng)), 2, 2)
        x = x.reshape(x.shape[0], -1)
        for fc in self.fcs:
            x = F.dropout(F.relu(fc(x, sample, rng)), self.config.dropout, training, rng)
        out = self.head(x, sample, rng)
        k = self.config.output_dim
        return ModelOutput(out[:, :k], out[:, k:])

    __call__ = forward

    def loss(self, out: ModelOutput, target, beta_kl: float = 0.0, mode: str = "nll", **_) -> Tensor:
        return bcnn_loss(out.mean, out.log_var, target, self, beta_kl, mode)


def bcnn_loss(mean: Tensor, log_var: Tensor | None, target, model: BCNN | None, beta_kl: float,
              mode: str = "nll") -> Tensor:
    """Per-sample data term averaged over the batch, plus ``beta_kl`` times the summed posterior KL.

    ``"mse"`` uses ½‖y − ŷ‖²; ``"nll"`` uses the heteroscedastic Gaussian NLL.
    """
    if beta_kl < 0:
        raise ValueError(f"beta_kl must be non-negative, got {beta_kl}")
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=mean.dtype))
    if target.shape != mean.shape:
        raise ValueError(f"target shape {target.shape} != prediction shape {mean.shape}")
    n = mean.shape[0]
    if mode == "mse":
        diff = target - mean
        data = (diff * diff).sum() * (0.5 / n)
    elif mode == "nll":
        if log_var is None:
            raise ValueError("nll mode needs a log-variance output")
        data = F.gaussian_nll_loss(mean, log_var, target, reduction="sum") * (1.0 / n)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    if beta_kl == 0 or model is None:
        return data
    return data + model.kl() * beta_kl


def build_cnn(config: CnnConfig | None = None, seed: int = 42) -> CNN:
    return CNN(config or CnnConfig(), np.random.default_rng(seed))


def build_bcnn(config: CnnConfig | None = None, seed: int = 42) -> BCNN:
    return BCNN(config or CnnConfig(), np.random.default_rng(seed))


def cnn_forward(model: CNN, x, training: bool = False, rng=None) -> Tensor:
    return model(x, training=training, rng=rng).mean


def bcnn_forward(model: BCNN, x, stochastic: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    out = model(x, stochastic=stochastic, rng=rng)
    return out.mean, out.log_var

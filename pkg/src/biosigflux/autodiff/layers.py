"""Parameter containers and the layer catalog used by the models."""
from __future__ import annotations

import math
from typing import Callable, Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that an optimizer updates."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Attribute-walking container; parameters are discovered in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32):
        self.weight = _uniform(rng, (n_in, n_out), n_in, dtype)
        self.bias = _uniform(rng, (n_out,), n_in, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding="same", dtype=np.float32):
        fan_in = c_in * kernel_size
        self.weight = _uniform(rng, (c_out, c_in, kernel_size), fan_in, dtype)
        self.bias = _uniform(rng, (c_out,), fan_in, dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)


class MultiHeadAttention(Module):
    """Projected multi-head attention; ``attn_bias_hook`` rewrites the softmax output."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"model width D={dim} is not divisible by heads h={heads}")
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng, dtype=dtype)
        self.k_proj = Linear(dim, dim, rng, dtype=dtype)
        self.v_proj = Linear(dim, dim, rng, dtype=dtype)
        self.out_proj = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 attn_bias_hook: Callable[[Tensor], Tensor] | None = None):
        out, attn = F.scaled_dot_attention(self.q_proj(q), self.k_proj(k), self.v_proj(v),
                                           self.heads, attn_bias_hook)
        return self.out_proj(out), attn


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, attn_bias_hook=None,
                         projections: MultiHeadAttention | None = None):
    """Functional entry point; without ``projections`` it is the bare attention core."""
    if projections is None:
        return F.scaled_dot_attention(q, k, v, heads, attn_bias_hook)
    return projections(q, k, v, attn_bias_hook)


# -- variational (Bayes-by-backprop) layers ------------------------------------
def rho_for_sigma(sigma: float) -> float:
    """Inverse softplus."""
    return float(np.log(np.expm1(sigma)))


class _Variational(Module):
    """Gaussian weight posterior W = mu + softplus(rho)·eps, prior N(0, 1)."""

    def _init_posterior(self, shape, bias_shape, fan_in, rng, init_sigma, dtype):
        self.weight_mu = _uniform(rng, shape, fan_in, dtype)
        self.weight_rho = Parameter(np.full(shape, rho_for_sigma(init_sigma), dtype=dtype))
        self.bias_mu = _uniform(rng, bias_shape, fan_in, dtype)
        self.bias_rho = Parameter(np.full(bias_shape, rho_for_sigma(init_sigma), dtype=dtype))

    def sample(self, stochastic: bool, rng: np.random.Generator | None):
        if not stochastic:
            return self.weight_mu, self.bias_mu
        if rng is None:
            raise ValueError("weight sampling needs an explicit rng")
        dt = self.weight_mu.dtype
        eps_w = Tensor(rng.standard_normal(self.weight_mu.shape).astype(dt))
        eps_b = Tensor(rng.standard_normal(self.bias_mu.shape).astype(dt))
        w = self.weight_mu + F.softplus(self.weight_rho) * eps_w
        b = self.bias_mu + F.softplus(self.bias_rho) * eps_b
        return w, b

    def kl(self) -> Tensor:
        return (F.kl_diag_gaussian(self.weight_mu, F.softplus(self.weight_rho))
                + F.kl_diag_gaussian(self.bias_mu, F.softplus(self.bias_rho)))


class VariationalLinear(_Variational):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init_sigma: float = 0.05,
                 dtype=np.float32):
        self._init_posterior((n_in, n_out), (n_out,), n_in, rng, init_sigma, dtype)

    def __call__(self, x: Tensor, stochastic: bool = False, rng=None) -> Tensor:
        w, b = self.sample(stochastic, rng)
        return F.linear(x, w, b)


class VariationalConv1d(_Variational):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator,
                 padding="same", init_sigma: float = 0.05, dtype=np.float32):
        self._init_posterior((c_out, c_in, kernel_size), (c_out,), c_in * kernel_size, rng,
                             init_sigma, dtype)
        self.padding = padding

    def __call__(self, x: Tensor, stochastic: bool = False, rng=None) -> Tensor:
        w, b = self.sample(stochastic, rng)
        return F.conv1d(x, w, b, padding=self.padding)

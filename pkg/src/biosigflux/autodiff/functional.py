"""Differentiable neural-network ops built on :mod:`biosigflux.autodiff.tensor`.

Fused ops (conv1d, max_pool1d, softmax, layer_norm, gelu) carry hand-written
backward closures; the rest compose tensor primitives.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _node, _pair, exp, log, matmul, swapaxes, unbroadcast


def _same_padding(kernel_size: int) -> tuple[int, int]:
    total = kernel_size - 1
    return total // 2, total - total // 2


def _resolve_padding(padding, kernel_size: int) -> tuple[int, int]:
    if padding == "same":
        return _same_padding(kernel_size)
    if isinstance(padding, int):
        return padding, padding
    left, right = padding
    return int(left), int(right)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding=0) -> Tensor:
    """1-D cross-correlation.

    ``x`` is ``[B, C_in, L]``, ``weight`` is ``[C_out, C_in, k]``.  ``padding``
    may be an int, a ``(left, right)`` pair, or ``"same"`` (extra element on the
    right for even kernels).
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    B, C_in, L = x.shape
    C_out, w_cin, k = weight.shape
    if w_cin != C_in:
        raise ValueError(f"conv1d channel mismatch: input C_in={C_in}, weight C_in={w_cin}")
    if bias is not None and bias.shape != (C_out,):
        raise ValueError(f"conv1d bias shape {bias.shape} does not match C_out={C_out}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    pl, pr = _resolve_padding(padding, k)
    Lp = L + pl + pr
    if k > Lp:
        raise ValueError(f"kernel size k={k} exceeds padded length L+padding={Lp}")
    L_out = (Lp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr))) if (pl or pr) else x.data
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # [B, C_in, L_out, k]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(B * L_out, C_in * k)
    wmat = weight.data.reshape(C_out, C_in * k)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(B, L_out, C_out).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(B * L_out, C_out)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2)) if (bias is not None and bias.requires_grad) else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(B, L_out, C_in, k)
            gxp = np.zeros((B, C_in, Lp), dtype=g.dtype)
            span = stride * (L_out - 1) + 1
            for j in range(k):
                gxp[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, pl:pl + L]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return _node(np.ascontiguousarray(out), parents, lambda g: backward(g)[:2], "conv1d")
    return _node(np.ascontiguousarray(out), parents, backward, "conv1d")


def max_pool1d(x: Tensor, kernel_size: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling over the last axis; trailing elements that do not fill a window are dropped."""
    stride = kernel_size if stride is None else stride
    L = x.shape[-1]
    if kernel_size > L:
        raise ValueError(f"pool kernel {kernel_size} exceeds length {L}")
    windows = sliding_window_view(x.data, kernel_size, axis=-1)[..., ::stride, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    L_out = out.shape[-1]
    span = stride * (L_out - 1) + 1

    def backward(g):
        gx = np.zeros_like(x.data)
        for j in range(kernel_size):
            gx[..., j:j + span:stride] += np.where(arg == j, g, 0)
        return (gx,)

    return _node(np.ascontiguousarray(out), (x,), backward, "max_pool1d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: ½x(1 + tanh(√(2/π)(x + 0.044715x³)))."""
    z = x.data
    t = np.tanh(_GELU_C * (z + 0.044715 * z * z * z))
    out = 0.5 * z * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * dt),)

    return _node(out, (x,), backward, "gelu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0, e) / (1.0 + e)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data).astype(x.dtype)
    return _node(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    z = x.data
    out = (np.logaddexp(0, z)).astype(x.dtype)

    def backward(g):
        return ((g * _stable_sigmoid(z)).astype(x.dtype),)

    return _node(out, (x,), backward, "softplus")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = np.einsum("...i,...i->...", g, out)[..., None] if axis in (-1, out.ndim - 1) \
            else (g * out).sum(axis=axis, keepdims=True)
        gx = g - dot
        gx *= out
        return (gx,)

    return _node(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    n = x.shape[-1]
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * weight.data if weight is not None else g
        gx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        gw = (g * xhat).sum(axis=lead) if weight is not None else None
        gb = g.sum(axis=lead) if bias is not None else None
        grads = [gx]
        if weight is not None:
            grads.append(gw)
        if bias is not None:
            grads.append(gb)
        return tuple(grads)

    parents = [x]
    if weight is not None:
        parents.append(weight)
    if bias is not None:
        parents.append(bias)
    return _node(out.astype(x.dtype), parents, backward, "layer_norm")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x @ weight
    return out + bias if bias is not None else out


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("stochastic dropout needs an explicit rng")
    u = rng.random(x.shape, dtype=np.float32 if x.dtype == np.float32 else np.float64)
    mask = (u >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * Tensor(mask)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         attn_bias_hook: Callable[[Tensor], Tensor] | None = None):
    """Multi-head attention core without projections.

    ``q``: ``[B, T_q, D]``; ``k``/``v``: ``[B, T_k, D]``.  Returns the merged
    head outputs ``[B, T_q, D]`` and the (post-hook) attention
    ``[B, h, T_q, T_k]``.
    """
    B, T_q, D = q.shape
    T_k = k.shape[1]
    if D % heads:
        raise ValueError(f"model width D={D} is not divisible by heads h={heads}")
    dh = D // heads

    def split(t: Tensor, T: int) -> Tensor:
        return t.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q * (1.0 / math.sqrt(dh)), T_q), split(k, T_k), split(v, T_k)
    scores = matmul(qh, swapaxes(kh, -1, -2))
    attn = softmax(scores, axis=-1)
    if attn_bias_hook is not None:
        attn = attn_bias_hook(attn)
    out = matmul(attn, vh).transpose(0, 2, 1, 3).reshape(B, T_q, D)
    return out, attn


# -- losses -------------------------------------------------------------------
def mse_loss(pred: Tensor, target) -> Tensor:
    pred, target = _pair(pred, target)
    diff = pred - target
    return (diff * diff).mean()


def gaussian_nll_loss(mean: Tensor, log_var: Tensor, target, reduction: str = "sum") -> Tensor:
    """Heteroscedastic Gaussian NLL without the constant: ½Σ[log_var + (t−μ)²·e^{−log_var}]."""
    mean, target = _pair(mean, target)
    diff = target - mean
    terms = (log_var + diff * diff * exp(-log_var)) * 0.5
    if reduction == "sum":
        return terms.sum()
    if reduction == "mean":
        return terms.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def kl_diag_gaussian(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma²) || N(0, 1)) summed over all entries."""
    mu, sigma = _pair(mu, sigma)
    if np.any(sigma.data <= 0):
        raise ValueError("kl_diag_gaussian requires sigma > 0 everywhere")
    terms = -log(sigma) + (sigma * sigma + mu * mu) * 0.5 - 0.5
    return terms.sum()


__all__ = [
    "conv1d", "max_pool1d", "relu", "gelu", "sigmoid", "softplus", "softmax", "layer_norm",
    "linear", "dropout", "scaled_dot_attention", "mse_loss", "gaussian_nll_loss",
    "kl_diag_gaussian", "unbroadcast",
]

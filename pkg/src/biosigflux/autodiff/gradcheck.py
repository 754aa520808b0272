"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor


GRAD_FLOOR = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    """``|a − b| / max(|a|, |b|, floor)``.

    The floor keeps structurally zero gradients (e.g. key biases under softmax
    shift invariance) from turning rounding noise into large relative errors.
    """
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-4,
               indices: Iterable[tuple] | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients of ``f`` at ``x``.

    ``x`` is promoted to float64.  ``indices`` restricts the comparison to a
    subset of entries, which keeps checks on large tensors affordable.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    idx = list(np.ndindex(base.shape)) if indices is None else [tuple(np.atleast_1d(i)) for i in indices]
    worst = 0.0
    for i in idx:
        plus = base.copy()
        plus[i] += step
        minus = base.copy()
        minus[i] -= step
        numeric = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2 * step)
        worst = max(worst, float(relative_error(np.float64(analytic[i]), np.float64(numeric))))
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params, step: float = 1e-3,
                      probes_per_param: int = 3, rng: np.random.Generator | None = None) -> dict[str, float]:
    """Check ``loss_fn``'s gradient w.r.t. named float64 parameters at a few random entries each.

    ``params`` maps names to :class:`Parameter` objects that ``loss_fn`` closes
    over; entries are perturbed in place and restored.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    report: dict[str, float] = {}
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise TypeError(f"{name} must be float64 for gradient checking")
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = rng.choice(p.data.size, size=min(probes_per_param, p.data.size), replace=False)
        worst = 0.0
        for k in flat:
            i = np.unravel_index(k, p.shape)
            orig = p.data[i]
            p.data[i] = orig + step
            up = loss_fn().item()
            p.data[i] = orig - step
            down = loss_fn().item()
            p.data[i] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, float(relative_error(grad[i], numeric)))
        report[name] = worst
    return report

"""Central finite differences as an independent gradient oracle."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_record


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central-difference estimate of d f(x) / dx for scalar-valued ``f``."""
    base = np.array(x.data, dtype=x.dtype, copy=True)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    out = grad.reshape(-1)
    saved = x.data
    try:
        with no_record():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                x.data = base.copy()
                fp = float(f(x).data)
                flat[i] = orig - h
                x.data = base.copy()
                fm = float(f(x).data)
                flat[i] = orig
                out[i] = (fp - fm) / (2 * h)
    finally:
        x.data = saved
    return grad


def analytic_grads(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| scaled by the larger of the two max-magnitudes."""
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_grads(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6) -> float:
    """Worst relative error between backward() and finite differences over ``params``.

    ``f`` takes no arguments and reads the current values of ``params``.
    """
    analytic = analytic_grads(f, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        numeric = finite_diff_grad(lambda _t: f(), p, h)
        worst = max(worst, relative_error(a, numeric))
    return worst

"""Central finite-difference gradients, independent of the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative error between tape gradients and finite differences.

    ``build`` must construct the scalar loss from ``params`` each call.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    tape.clear()

    def value() -> float:
        return build().item()

    worst = 0.0
    for p, ga in zip(params, analytic):
        gn = numerical_grad(value, p.data, h)
        worst = max(worst, relative_error(ga, gn))
    return worst

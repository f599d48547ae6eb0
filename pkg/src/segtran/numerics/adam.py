from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .. import kernels
from .tensor import NumericalError, Tensor


@dataclass
class AdamState:
    """Moment estimates for one optimizer instance; ``t`` is shared by all parameters."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def ensure(self, params: Mapping[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            elif self.m[name].shape != p.shape:
                raise ValueError(f"Adam moment shape mismatch for {name}")


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place.  Gradients are left untouched."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        if p.grad is None or not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
    state.ensure(params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        kernels.adam_update(p.data, p.grad, state.m[name], state.v[name], lr, b1, b2, state.eps, c1, c2)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        self.state.ensure(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"{prefix}.m/{name}"] = self.state.m[name]
            out[f"{prefix}.v/{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, prefix: str, arrays: Mapping[str, np.ndarray], t: int) -> None:
        for name in self.params:
            self.state.m[name] = np.array(arrays[f"{prefix}.m/{name}"])
            self.state.v[name] = np.array(arrays[f"{prefix}.v/{name}"])
        self.state.t = int(t)

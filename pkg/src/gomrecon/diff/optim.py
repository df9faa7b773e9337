"""Parameter storage and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class ParamStore:
    """Named float arrays plus per-array Adam moments and step counts."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        self.steps[name] = 0

    def update(self, values: Mapping[str, np.ndarray]):
        for k, val in values.items():
            self.add(k, val)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward pass."""
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self.params.items()}

    def astype(self, dtype) -> ParamStore:
        out = ParamStore()
        for k in self.params:
            out.params[k] = self.params[k].astype(dtype)
            out.m[k] = self.m[k].astype(dtype)
            out.v[k] = self.v[k].astype(dtype)
            out.steps[k] = self.steps[k]
        return out

    def copy(self) -> ParamStore:
        return ParamStore(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.m.items()},
            {k: v.copy() for k, v in self.v.items()},
            dict(self.steps))


def adam_step(store: ParamStore, grads: Mapping[str, np.ndarray], lr,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParamStore:
    """Bias-corrected Adam, in place. ``lr`` is a float or a callable of the name.

    Names with no gradient entry are left untouched (step count included).
    """
    for name in sorted(grads):
        g = grads[name]
        p = store.params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        step_lr = lr(name) if callable(lr) else lr
        g = g.astype(p.dtype, copy=False)
        t = store.steps[name] + 1
        store.steps[name] = t
        m = store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        store.params[name] = (p - step_lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    return store

"""Small fully connected networks with explicit forward/backward passes."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, custom, note_branch


@dataclass(frozen=True)
class MLPSpec:
    widths: tuple[int, ...]
    slope: float = 0.01
    zero_final: bool = True

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least one layer (two widths)")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def names(self, prefix: str) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out += [f"{prefix}.W{i}", f"{prefix}.b{i}"]
        return out


def name_rng(seed: int, name: str) -> np.random.Generator:
    """A random stream pinned to ``(seed, name)`` so init is order independent."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def kaiming_uniform(seed: int, name: str, fan_in: int, shape, slope: float = 0.01,
                    dtype=np.float32) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return name_rng(seed, name).uniform(-bound, bound, size=shape).astype(dtype)


def init_mlp(spec: MLPSpec, prefix: str, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    params = {}
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        wname, bname = f"{prefix}.W{i}", f"{prefix}.b{i}"
        if spec.zero_final and i == spec.n_layers - 1:
            params[wname] = np.zeros((fan_in, fan_out), dtype)
        else:
            params[wname] = kaiming_uniform(seed, wname, fan_in, (fan_in, fan_out), spec.slope, dtype)
        params[bname] = np.zeros(fan_out, dtype)
    return params


def mlp_forward(spec: MLPSpec, params: dict, x: np.ndarray, prefix: str = "mlp"):
    """Evaluate the network on rows of ``x``.

    Returns the output and a cache of per-layer inputs and pre-activations
    consumed by :func:`mlp_backward`.
    """
    if x.shape[-1] != spec.widths[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match spec width {spec.widths[0]}")
    cache = []
    h = x
    for i in range(spec.n_layers):
        z = h @ params[f"{prefix}.W{i}"] + params[f"{prefix}.b{i}"]
        cache.append((h, z))
        h = z if i == spec.n_layers - 1 else np.where(z > 0, z, spec.slope * z)
    return h, cache


def mlp_backward(spec: MLPSpec, params: dict, cache, grad_y: np.ndarray, prefix: str = "mlp"):
    """Vector-Jacobian product of :func:`mlp_forward` for one cached call."""
    if len(cache) != spec.n_layers:
        raise ValueError("cache does not come from a forward pass of this spec")
    if grad_y.shape != cache[-1][1].shape:
        raise ValueError(f"grad_y shape {grad_y.shape} != output shape {cache[-1][1].shape}")
    grads = {}
    g = grad_y
    for i in reversed(range(spec.n_layers)):
        h, z = cache[i]
        if i != spec.n_layers - 1:
            g = np.where(z > 0, g, spec.slope * g)
        h2 = h.reshape(-1, h.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        grads[f"{prefix}.W{i}"] = h2.T @ g2
        grads[f"{prefix}.b{i}"] = g2.sum(axis=0)
        g = g @ params[f"{prefix}.W{i}"].T
    return grads, g


def mlp(spec: MLPSpec, prefix: str, params: dict[str, Tensor], x: Tensor) -> Tensor:
    """Differentiable MLP application on the tape."""
    names = spec.names(prefix)
    raw = {n: params[n].data for n in names}
    y, cache = mlp_forward(spec, raw, x.data, prefix)
    note_branch(*[z > 0 for _, z in cache[:-1]])

    def vjp(g):
        grads, gx = mlp_backward(spec, raw, cache, g, prefix)
        return (gx,) + tuple(grads[n] for n in names)

    return custom(y, (x,) + tuple(params[n] for n in names), vjp)

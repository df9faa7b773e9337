"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, record_branches


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def gradcheck(f: Callable[..., Tensor], x, h: float = 1e-4, *, indices=None,
              signature: Callable | None = None, branch_aware: bool = False, return_report: bool = False):
    """Compare the tape gradient of scalar ``f`` against central differences.

    ``x`` is one array or a sequence of arrays (one per positional input of
    ``f``). ``indices`` optionally restricts the check to a subset of flat
    coordinates per input (a list of index arrays, ``None`` meaning all).
    ``signature`` maps the raw inputs to a hashable description of the
    discrete state of ``f`` (active set of a clamp, for example); coordinates
    whose perturbation changes it are skipped as sitting on a kink.
    ``branch_aware`` does the same using the choices the piecewise ops
    report through :func:`record_branches`, with no extra evaluations.

    Returns the maximum relative error, with denominator
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    single = isinstance(x, np.ndarray)
    xs = [np.array(x, dtype=np.float64)] if single else [np.array(a, dtype=np.float64) for a in x]
    if indices is None:
        indices = [None] * len(xs)
    elif single:
        indices = [indices]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in xs]
    with record_branches() as base_branches:
        out = f(*leaves)
    out.backward()
    analytic = [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]
    base_sig = signature(*xs) if signature is not None else None

    worst, checked, skipped = 0.0, 0, 0
    for k, a in enumerate(xs):
        flat = a.reshape(-1)
        coords = range(flat.size) if indices[k] is None else np.asarray(indices[k]).reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            plus_in = [b.copy() for b in xs]
            flat[i] = orig - h
            minus_in = [b.copy() for b in xs]
            flat[i] = orig
            if signature is not None and (signature(*plus_in) != base_sig
                                          or signature(*minus_in) != base_sig):
                skipped += 1
                continue
            with record_branches() as bp:
                fp = float(f(*[Tensor(b) for b in plus_in]).data)
            with record_branches() as bm:
                fm = float(f(*[Tensor(b) for b in minus_in]).data)
            if branch_aware and (bp != base_branches or bm != base_branches):
                skipped += 1
                continue
            num = (fp - fm) / (2 * h)
            err = float(_rel(analytic[k].reshape(-1)[i], num))
            worst = max(worst, err)
            checked += 1
    if return_report:
        return worst, {"checked": checked, "skipped": skipped}
    return worst


def sample_indices(shapes: Sequence[tuple], per_input: int, seed: int = 0):
    """Random flat coordinates, at most ``per_input`` per array."""
    rng = np.random.default_rng(seed)
    out = []
    for s in shapes:
        n = int(np.prod(s))
        out.append(np.arange(n) if n <= per_input else np.sort(rng.choice(n, per_input, replace=False)))
    return out

"""Attention blocks: fusion across source views and 1-ring mesh aggregation."""

from __future__ import annotations

import numpy as np

from ..diff import Tensor, ops


def _check_width(x: Tensor, width: int, what: str):
    if x.shape[-1] != width:
        raise ValueError(f"{what} width {x.shape[-1]} does not match parameter width {width}")


def fuse_multi_source(features, embedding, params: dict, prefix: str = "fuse") -> Tensor:
    """Fuse per-source features ``(V, N, C)`` into ``(V, C)``.

    Round one lets the sources attend to each other (with a residual), round
    two reads them out with the vertex embedding ``(V, C)`` as the query.
    Both rounds are single-head and symmetric in the source axis.
    """
    x = ops.as_tensor(features)
    e = ops.as_tensor(embedding)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if e.ndim == 1:
        e = e.reshape(1, -1)
    C = params[f"{prefix}.q1"].shape[0]
    _check_width(x, C, "source feature")
    _check_width(e, C, "embedding")
    if x.shape[1] < 1:
        raise ValueError("need at least one source")
    scale = 1.0 / np.sqrt(C)
    q = ops.einsum("vnc,cd->vnd", x, params[f"{prefix}.q1"])
    k = ops.einsum("vnc,cd->vnd", x, params[f"{prefix}.k1"])
    v = ops.einsum("vnc,cd->vnd", x, params[f"{prefix}.v1"]) + params[f"{prefix}.vb1"]
    att = ops.softmax(ops.einsum("vnd,vmd->vnm", q, k) * scale, axis=-1)
    h = x + ops.einsum("vnm,vmd->vnd", att, v)
    q2 = ops.einsum("vc,cd->vd", e, params[f"{prefix}.q2"])
    k2 = ops.einsum("vnc,cd->vnd", h, params[f"{prefix}.k2"])
    v2 = ops.einsum("vnc,cd->vnd", h, params[f"{prefix}.v2"]) + params[f"{prefix}.vb2"]
    att2 = ops.softmax(ops.einsum("vd,vnd->vn", q2, k2) * scale, axis=-1)
    return ops.einsum("vn,vnd->vd", att2, v2)


def mesh_aggregate(features, positions, neighbors: np.ndarray, mask: np.ndarray,
                   params: dict, prefix: str = "mesh", rounds: int = 2) -> Tensor:
    """Residual 1-ring attention over the low-res mesh graph.

    ``neighbors`` is a padded (V, K) table whose first slot is the vertex
    itself; ``mask`` marks the real entries. Keys and values carry a learned
    encoding of the neighbour offset ``p_j - p_i``.
    """
    h = ops.as_tensor(features)
    p = ops.as_tensor(positions)
    if h.shape[0] != neighbors.shape[0] or p.shape[0] != neighbors.shape[0]:
        raise ValueError(f"{h.shape[0]} features / {p.shape[0]} positions for a "
                         f"{neighbors.shape[0]}-vertex graph")
    C = h.shape[-1]
    scale = 1.0 / np.sqrt(C)
    rel = ops.take(p, neighbors, axis=0) - p.reshape(-1, 1, 3)  # (V, K, 3)
    penalty = np.where(mask, 0.0, -1e30).astype(h.dtype)
    for r in range(rounds):
        pre = f"{prefix}{r}"
        _check_width(h, params[f"{pre}.q"].shape[0], "vertex feature")
        pe = ops.einsum("vkc,cd->vkd", rel, params[f"{pre}.pos"])
        hn = ops.take(h, neighbors, axis=0)
        q = ops.einsum("vc,cd->vd", h, params[f"{pre}.q"])
        k = ops.einsum("vkc,cd->vkd", hn, params[f"{pre}.k"]) + pe
        v = ops.einsum("vkc,cd->vkd", hn, params[f"{pre}.v"]) + pe
        att = ops.softmax(ops.einsum("vd,vkd->vk", q, k) * scale + penalty, axis=-1)
        msg = ops.leaky_relu(ops.einsum("vk,vkd->vd", att, v))
        h = h + ops.einsum("vd,de->ve", msg, params[f"{pre}.out"])
    return h

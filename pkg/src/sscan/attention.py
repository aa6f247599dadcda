"""Fine-grained context-aware attention (FGCA) plus (shifted) window attention.

FGCA runs in four steps on an ``[H, W, C]`` feature map:

1. partition into fixed ``M x M`` windows and project every token to Q/K/V;
2. route: mean-pool Q and K per window into region descriptors, score every
   window pair with ``Qr @ Kr.T`` and keep the top-k key windows per query
   window (ties go to the smaller window index);
3. gather the selected key/value windows, ``k * M * M`` tokens per query window;
4. multi-head scaled dot-product attention of each window's queries over its
   gathered tokens, output projection, and merge back to ``[H, W, C]``.

Routing is computed once per window on head-merged features and shared by all
heads.  The selection itself carries no gradient.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    crop,
    flop_tag,
    matmul,
    mean,
    mul,
    pad_reflect,
    reshape,
    softmax_lastdim,
    take,
    transpose,
)
from .windowing import RegionGrid, cyclic_shift, merge_windows, partition_windows, shift_attention_mask

Weights = Mapping[str, Tensor]

_recorders = threading.local()


@dataclass(frozen=True)
class AttentionConfig:
    window_size: int = 8
    num_heads: int = 6
    head_dim: int = 10
    topk_train: int = 32
    topk_infer: int = 64
    qkv_bias: bool = True

    def __post_init__(self):
        for name in ("window_size", "num_heads", "head_dim", "topk_train", "topk_infer"):
            if getattr(self, name) < 1:
                raise ValueError(f"AttentionConfig.{name} must be >= 1")

    @property
    def embed_dim(self) -> int:
        return self.num_heads * self.head_dim

    def topk(self, mode: str) -> int:
        if mode == "train":
            return self.topk_train
        if mode == "infer":
            return self.topk_infer
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


@dataclass
class RoutingResult:
    adjacency: Tensor
    topk_indices: np.ndarray
    k_used: int


@contextlib.contextmanager
def record_routing():
    """Collect the :class:`RoutingResult` of every FGCA call made inside the block."""
    log: list[RoutingResult] = []
    stack = getattr(_recorders, "stack", None)
    if stack is None:
        stack = _recorders.stack = []
    stack.append(log)
    try:
        yield log
    finally:
        stack.remove(log)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as ``[C_in, C_out]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else add(y, b)


def project_qkv(x_windows: Tensor, weights: Weights) -> tuple[Tensor, Tensor, Tensor]:
    """Per-token linear maps to queries, keys and values."""
    return tuple(
        linear(x_windows, weights[f"{p}.weight"], weights.get(f"{p}.bias")) for p in ("q", "k", "v")
    )


def region_descriptors(t: Tensor) -> Tensor:
    """Mean over the token axis: ``[n, T, C] -> [n, C]``."""
    return mean(t, axis=1)


def route_topk(q_regions: Tensor, k_regions: Tensor, k: int) -> RoutingResult:
    """Score region pairs and keep the ``k`` best key regions per query region."""
    if k < 1:
        raise ValueError("route_topk: k must be >= 1")
    with flop_tag("routing"):
        adjacency = matmul(q_regions, transpose(k_regions, (1, 0)))
    n = adjacency.shape[1]
    k_used = min(k, n)
    # stable sort on negated scores keeps the smaller index first among equals
    order = np.argsort(-adjacency.data, axis=1, kind="stable")
    return RoutingResult(adjacency, order[:, :k_used].copy(), k_used)


def gather_kv(k: Tensor, v: Tensor, routing: RoutingResult) -> tuple[Tensor, Tensor]:
    """Concatenate the routed windows: ``[n, T, C] -> [n, k*T, C]`` (best first)."""
    idx = routing.topk_indices
    n, t, c = k.shape
    if idx.shape[0] != n:
        raise ShapeError(f"gather_kv: routing for {idx.shape[0]} regions applied to {n} windows")
    flat = idx.reshape(-1)
    kg = reshape(take(k, flat, axis=0), (n, routing.k_used * t, c))
    vg = reshape(take(v, flat, axis=0), (n, routing.k_used * t, c))
    return kg, vg


def split_heads(t: Tensor, num_heads: int) -> Tensor:
    n, tokens, c = t.shape
    if c % num_heads:
        raise ShapeError(f"channels {c} not divisible by {num_heads} heads")
    return transpose(reshape(t, (n, tokens, num_heads, c // num_heads)), (0, 2, 1, 3))


def merge_heads(t: Tensor) -> Tensor:
    n, h, tokens, d = t.shape
    return reshape(transpose(t, (0, 2, 1, 3)), (n, tokens, h * d))


def token_to_token_attention(
    q: Tensor,
    kg: Tensor,
    vg: Tensor,
    bias: Tensor | np.ndarray | None = None,
    return_weights: bool = False,
):
    """``softmax(q @ kg.T / sqrt(d) + bias) @ vg`` per window and head.

    Shapes: ``q[n, h, T, d]``, ``kg``/``vg`` ``[n, h, S, d]``; ``bias`` must
    broadcast against the ``[n, h, T, S]`` logits.
    """
    d = q.shape[-1]
    if kg.shape[-1] != d or kg.shape[:-2] != q.shape[:-2] or vg.shape[:-1] != kg.shape[:-1]:
        raise ShapeError(f"attention: q {q.shape}, k {kg.shape}, v {vg.shape}")
    with flop_tag("attn_scores"):
        logits = mul(matmul(q, transpose(kg, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    if bias is not None:
        logits = add(logits, bias)
    weights = softmax_lastdim(logits)
    with flop_tag("attn_values"):
        out = matmul(weights, vg)
    return (out, weights) if return_weights else out


def fgca_forward(
    x: Tensor,
    cfg: AttentionConfig,
    weights: Weights,
    mode: str = "train",
    return_routing: bool = False,
):
    """Fine-grained context-aware attention over ``x[H, W, C]``.

    ``mode`` picks ``cfg.topk_train`` or ``cfg.topk_infer``; either is clamped
    to the number of windows.
    """
    if x.ndim != 3 or x.shape[2] != cfg.embed_dim:
        raise ShapeError(f"fgca_forward: expected [H, W, {cfg.embed_dim}], got {x.shape}")
    k = cfg.topk(mode)
    xw, grid = partition_windows(x, cfg.window_size)
    q, kk, v = project_qkv(xw, weights)
    routing = route_topk(region_descriptors(q), region_descriptors(kk), k)
    for log in getattr(_recorders, "stack", ()):
        log.append(routing)
    kg, vg = gather_kv(kk, v, routing)
    h = cfg.num_heads
    out = token_to_token_attention(split_heads(q, h), split_heads(kg, h), split_heads(vg, h))
    out = linear(merge_heads(out), weights["proj.weight"], weights.get("proj.bias"))
    y = merge_windows(out, grid)
    return (y, routing) if return_routing else y


def relative_position_index(window_size: int) -> np.ndarray:
    """``[M*M, M*M]`` index into a ``(2M-1)**2`` bias table."""
    m = window_size
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    return rel[0] * (2 * m - 1) + rel[1]


def relative_position_bias(table: Tensor, window_size: int) -> Tensor:
    """Expand a ``[(2M-1)**2, heads]`` table to ``[heads, M*M, M*M]``."""
    t = window_size * window_size
    idx = relative_position_index(window_size).reshape(-1)
    b = reshape(take(table, idx, axis=0), (t, t, table.shape[1]))
    return transpose(b, (2, 0, 1))


def window_attention(
    x: Tensor,
    cfg: AttentionConfig,
    weights: Weights,
    shift: int = 0,
    return_weights: bool = False,
):
    """Self-attention inside each ``M x M`` window, optionally shifted.

    With ``shift > 0`` the map is rolled by ``-shift`` on both axes, attention
    runs under :func:`shift_attention_mask`, and the roll is undone.  A learned
    relative position bias (``weights["rpb"]``) is added when present.
    """
    if x.ndim != 3 or x.shape[2] != cfg.embed_dim:
        raise ShapeError(f"window_attention: expected [H, W, {cfg.embed_dim}], got {x.shape}")
    m = cfg.window_size
    h0, w0, _ = x.shape
    grid = RegionGrid.for_shape(h0, w0, m)
    xp = pad_reflect(x, grid.pad_bottom, grid.pad_right)
    if shift:
        xp = cyclic_shift(xp, -shift, -shift)
    xw, grid_p = partition_windows(xp, m)

    q, kk, v = project_qkv(xw, weights)
    h = cfg.num_heads
    bias = None
    if "rpb" in weights:
        bias = reshape(relative_position_bias(weights["rpb"], m), (1, h, m * m, m * m))
    if shift:
        mask = Tensor(shift_attention_mask(grid_p, shift)[:, None])
        bias = mask if bias is None else add(bias, mask)
    out, attn = token_to_token_attention(
        split_heads(q, h), split_heads(kk, h), split_heads(v, h), bias, return_weights=True
    )
    out = linear(merge_heads(out), weights["proj.weight"], weights.get("proj.bias"))
    y = merge_windows(out, grid_p)
    if shift:
        y = cyclic_shift(y, shift, shift)
    if grid.pad_bottom or grid.pad_right:
        y = crop(y, (slice(0, h0), slice(0, w0)))
    return (y, attn) if return_weights else y

"""Plain-numpy reference computations, kept independent of the tensor engine."""

from __future__ import annotations

import numpy as np


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def dense_attention_oracle(x: np.ndarray, weights: dict[str, np.ndarray], num_heads: int) -> np.ndarray:
    """Every pixel attends to every pixel of ``x[H, W, C]``.

    This is what FGCA must reproduce when each window routes to all windows
    (``k == n_regions``) and ``H``, ``W`` are multiples of the window size:
    the softmax over the union of gathered windows does not depend on the
    order in which they were gathered.

    ``weights`` holds ``q/k/v/proj`` ``.weight`` (``[C_in, C_out]``) and
    optional ``.bias`` arrays.
    """
    h, w, c = x.shape
    tokens = x.reshape(h * w, c)

    def lin(name, t):
        y = t @ weights[f"{name}.weight"]
        b = weights.get(f"{name}.bias")
        return y if b is None else y + b

    q, k, v = lin("q", tokens), lin("k", tokens), lin("v", tokens)
    d = c // num_heads
    out = np.empty_like(q)
    for head in range(num_heads):
        sl = slice(head * d, (head + 1) * d)
        attn = _softmax(q[:, sl] @ k[:, sl].T / np.sqrt(d))
        out[:, sl] = attn @ v[:, sl]
    return lin("proj", out).reshape(h, w, -1)

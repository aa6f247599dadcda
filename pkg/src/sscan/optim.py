"""L1 loss, Adam, and a small deterministic training loop."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .metrics import ImageU8, psnr, ssim
from .model import ModelConfig, WeightStore, forward, init_weights
from .tensor import Tensor, backward, mean, no_grad, sub, tabs


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; the subgradient at zero is zero."""
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: {pred.shape} vs {target.shape}")
    return mean(tabs(sub(pred, target)))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """One bias-corrected Adam update, in place on ``params``.

    ``state`` is created on first use (pass ``{}``) and returned.
    """
    t = state.get("t", 0) + 1
    m = state.setdefault("m", {})
    v = state.setdefault("v", {})
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m_k = m.get(name)
        if m_k is None:
            m_k = m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        v_k = v[name]
        m_k *= beta1
        m_k += (1 - beta1) * g
        v_k *= beta2
        v_k += (1 - beta2) * g * g
        p -= lr * (m_k / c1) / (np.sqrt(v_k / c2) + eps)
    state["t"] = t
    return state


def _to_tensor(img) -> Tensor:
    if isinstance(img, ImageU8):
        return Tensor(img.to_rgb().to_float())
    return Tensor(np.asarray(img, dtype=np.float64))


def _augment(lr: np.ndarray, hr: np.ndarray, rng: np.random.Generator):
    k = int(rng.integers(4))
    if rng.random() < 0.5:
        lr, hr = lr[:, :, ::-1], hr[:, :, ::-1]
    if rng.random() < 0.5:
        lr, hr = lr[:, ::-1], hr[:, ::-1]
    return np.rot90(lr, k, axes=(1, 2)).copy(), np.rot90(hr, k, axes=(1, 2)).copy()


def train_toy(
    cfg: ModelConfig,
    patches: Sequence[tuple],
    iters: int,
    lr: float = 2e-4,
    seed: int = 0,
    batch_size: int | None = None,
    augment: bool = False,
    weights: WeightStore | None = None,
) -> tuple[WeightStore, list[float]]:
    """Full-batch (or seeded mini-batch) Adam on the L1 loss.

    ``patches`` holds ``(lr, hr)`` pairs as :class:`ImageU8` or ``[C, H, W]``
    float arrays.  FGCA layers run with ``cfg.topk_train``.  The returned
    curve has one entry per iteration: the batch loss before that update.
    """
    if not patches:
        raise ValueError("train_toy needs at least one patch")
    rng = np.random.default_rng(seed)
    store = init_weights(cfg, seed) if weights is None else weights
    data = [(_to_tensor(a).data, _to_tensor(b).data) for a, b in patches]
    bs = len(data) if batch_size is None else min(batch_size, len(data))
    state: dict = {}
    curve: list[float] = []
    for _ in range(iters):
        idx = range(len(data)) if bs == len(data) else rng.choice(len(data), bs, replace=False)
        total = None
        for i in idx:
            lo, hi = data[i]
            if augment:
                lo, hi = _augment(lo, hi, rng)
            loss = l1_loss(forward(Tensor(lo), cfg, store, "train"), Tensor(hi))
            total = loss if total is None else total + loss
        total = total / bs
        curve.append(total.item())
        for p in store.values():
            p.zero_grad()
        backward(total)
        adam_step(
            {k: p.data for k, p in store.items()},
            {k: p.grad for k, p in store.items() if p.grad is not None},
            state,
            lr,
        )
    return store, curve


def super_resolve(img: ImageU8, cfg: ModelConfig, store: WeightStore, mode: str = "infer") -> ImageU8:
    x = img.to_rgb() if cfg.in_channels == 3 else img
    with no_grad():
        out = forward(Tensor(x.to_float()), cfg, store, mode)
    return ImageU8.from_float(out.data)


def evaluate_pairs(pairs: Sequence[tuple[ImageU8, ImageU8]], scale: int, cfg: ModelConfig | None = None,
                   store: WeightStore | None = None) -> dict[str, float]:
    """Mean Y-channel PSNR/SSIM (border = ``scale``).

    Without a model the LR image itself is scored against the HR image, so the
    two must share dimensions.
    """
    ps, ss = [], []
    for lo, hi in pairs:
        pred = lo if store is None else super_resolve(lo, cfg, store)
        hi_cmp = hi.to_rgb() if pred.channels == 3 else hi
        ps.append(psnr(pred, hi_cmp, crop_border=scale, on_y=True))
        ss.append(ssim(pred, hi_cmp, crop_border=scale, on_y=True))
    return {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss))}

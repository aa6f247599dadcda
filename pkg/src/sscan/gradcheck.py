"""Finite-difference verification of analytical gradients.

Each suite draws parameters and inputs uniformly from ``[-1, 1]``, takes
the loss ``sum(output * R)`` for a fixed random ``R`` (so no gradient is
trivially uniform), and compares :func:`backward` against central
differences.  Routing decisions are recorded for every probe and must match
the unperturbed ones: the top-k selection is piecewise constant and the
comparison is only meaningful where it does not flip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import AttentionConfig, fgca_forward, record_routing, window_attention
from .model import ModelConfig, forward, param_shapes
from .tensor import (
    Tensor,
    backward,
    conv2d,
    finite_diff_grad,
    gelu,
    layer_norm,
    matmul,
    max_rel_error,
    softmax_lastdim,
    tsum,
)

OP_TOL = 1e-4
MODEL_TOL = 1e-3

MICRO_CONFIG = ModelConfig(
    embed_dim=8,
    n_sscan_blocks=1,
    n_fgca_blocks=1,
    window_size=4,
    num_heads=2,
    scale=2,
    topk_train=2,
    topk_infer=4,
)


@dataclass
class GradReport:
    name: str
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    routing_stable: bool = True

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.routing_stable and self.max_error < self.tolerance


def _selection(log) -> list[list[tuple[int, ...]]]:
    return [[tuple(sorted(row)) for row in r.topk_indices.tolist()] for r in log]


def check_gradients(
    name: str,
    fn: Callable[[], Tensor],
    leaves: dict[str, Tensor],
    tolerance: float,
    eps: float = 1e-5,
) -> GradReport:
    """Compare analytical and central-difference gradients of ``fn()`` w.r.t. ``leaves``."""
    for t in leaves.values():
        t.requires_grad = True
        t.zero_grad()
    with record_routing() as base_log:
        out = fn()
    reference = _selection(base_log)
    backward(out)
    report = GradReport(name, tolerance)

    def probe(_):
        with record_routing() as log:
            val = fn()
        if _selection(log) != reference:
            report.routing_stable = False
        return val

    for key, t in leaves.items():
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        report.errors[key] = max_rel_error(analytic, finite_diff_grad(probe, t, eps))
    return report


def _weighted_sum(out: Tensor, r: np.ndarray) -> Tensor:
    return tsum(out * Tensor(r))


def check_ops(seed: int = 0) -> GradReport:
    rng = np.random.default_rng(seed)
    u = lambda *s: Tensor(rng.uniform(-1, 1, size=s))  # noqa: E731
    report = GradReport("ops", OP_TOL)
    cases = {
        "matmul": (lambda a, b: matmul(a, b), [u(2, 3, 4), u(2, 4, 5)]),
        "softmax": (lambda a: softmax_lastdim(a), [u(3, 6)]),
        "layer_norm": (lambda a, g, b: layer_norm(a, g, b), [u(4, 5), u(5), u(5)]),
        "gelu": (lambda a: gelu(a), [u(10)]),
        "conv2d": (lambda a, w, b: conv2d(a, w, b, stride=1, pad=1), [u(2, 5, 5), u(3, 2, 3, 3), u(3)]),
        "conv2d_stride2": (lambda a, w: conv2d(a, w, None, stride=2, pad=1), [u(2, 5, 5), u(2, 2, 3, 3)]),
    }
    for op, (f, args) in cases.items():
        r = rng.normal(size=f(*args).shape)
        sub = check_gradients(op, lambda: _weighted_sum(f(*args), r), {str(i): a for i, a in enumerate(args)}, OP_TOL)
        report.errors[op] = sub.max_error
    return report


def _attention_weights(rng, c: int, rpb_heads: int | None = None, window: int = 4) -> dict[str, Tensor]:
    w = {f"{p}.weight": Tensor(rng.uniform(-1, 1, (c, c))) for p in ("q", "k", "v", "proj")}
    w.update({f"{p}.bias": Tensor(rng.uniform(-1, 1, c)) for p in ("q", "v", "proj")})
    if rpb_heads:
        w["rpb"] = Tensor(rng.uniform(-1, 1, ((2 * window - 1) ** 2, rpb_heads)))
    return w


def check_attention(seed: int = 0) -> list[GradReport]:
    """FGCA (8x8x8 map, M=4, k=2, two heads) plus WA and SWA on the same map."""
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(window_size=4, num_heads=2, head_dim=4, topk_train=2, topk_infer=2)
    x = Tensor(rng.uniform(-1, 1, (8, 8, 8)))
    r = rng.normal(size=(8, 8, 8))
    reports = []
    w = _attention_weights(rng, 8)
    reports.append(check_gradients(
        "fgca", lambda: _weighted_sum(fgca_forward(x, cfg, w, "train"), r), {"input": x, **w}, OP_TOL))
    for shift, label in ((0, "wa"), (2, "swa")):
        w = _attention_weights(rng, 8, rpb_heads=2)
        reports.append(check_gradients(
            label, lambda: _weighted_sum(window_attention(x, cfg, w, shift), r), {"input": x, **w}, OP_TOL))
    return reports


def check_model(seed: int = 0, cfg: ModelConfig = MICRO_CONFIG, size: int = 8) -> GradReport:
    """Every parameter and the input of a small network on a ``size x size`` image."""
    rng = np.random.default_rng(seed)
    store = {k: Tensor(rng.uniform(-1, 1, s)) for k, s in param_shapes(cfg).items()}
    x = Tensor(rng.uniform(-1, 1, (cfg.in_channels, size, size)))
    r = rng.normal(size=(cfg.in_channels, size * cfg.scale, size * cfg.scale))
    return check_gradients(
        "model", lambda: _weighted_sum(forward(x, cfg, store, "train"), r), {"input": x, **store}, MODEL_TOL)


def run_all(seed: int = 0) -> list[GradReport]:
    return [check_ops(seed), *check_attention(seed), check_model(seed)]

"""Analytical FLOP and peak-memory models for routed window attention.

Two variants are compared:

``prev_variable_window``
    the image is cut into a fixed number ``S2`` of regions whose size grows
    with the image (``H*W/S2`` tokens each).  Routing scores ``S2 x S2``
    region pairs; each token then attends to ``k`` whole regions.
``ours_fixed_window``
    regions are fixed ``M x M`` windows, so their number grows with the
    image.  Routing scores ``(H*W/M^2)^2`` pairs; each token attends to
    ``k * M^2`` tokens.

Closed forms (one multiply-accumulate = 2 FLOPs)::

    prev:  routing = 2 * S2^2 * C             attention = 2 * k * (H*W)^2 * C / S2
    ours:  routing = 2 * (H*W / M^2)^2 * C    attention = 2 * k * M^2 * H*W * C

The attention term counts the query-key score product.  The value
aggregation product has the same size and is reported separately by
:func:`measure_fgca_flops`.  In both variants ``k`` is clamped to the region
count.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .attention import AttentionConfig, fgca_forward
from .tensor import FlopCounter, Tensor, no_grad

PREV = "prev_variable_window"
OURS = "ours_fixed_window"
VARIANTS = (PREV, OURS)


@dataclass
class CostReport:
    variant: str
    routing_flops: int
    attention_flops: int
    peak_intermediate_bytes: int
    dims: dict = field(default_factory=dict)

    @property
    def total_flops(self) -> int:
        return self.routing_flops + self.attention_flops

    def row(self) -> dict:
        d = self.dims
        return {
            "variant": self.variant,
            "H": d["H"],
            "W": d["W"],
            "C": d["C"],
            "window": d["window"],
            "k": d["k"],
            "k_used": d["k_used"],
            "routing_flops": self.routing_flops,
            "attention_flops": self.attention_flops,
            "total_flops": self.total_flops,
            "peak_intermediate_bytes": self.peak_intermediate_bytes,
            "bytes_per_scalar": d["bytes_per_scalar"],
        }


CSV_COLUMNS = [
    "variant", "H", "W", "C", "window", "k", "k_used",
    "routing_flops", "attention_flops", "total_flops", "peak_intermediate_bytes", "bytes_per_scalar",
]


def _check_positive(**dims) -> None:
    for name, val in dims.items():
        if val <= 0:
            raise ValueError(f"{name} must be positive, got {val}")


def _prev_layout(h: int, w: int, s2: int) -> tuple[int, int]:
    """``(regions, tokens per region)`` of the variable-window scheme."""
    if (h * w) % s2:
        raise ValueError(f"H*W = {h * w} is not divisible into {s2} regions")
    return s2, h * w // s2


def _ours_layout(h: int, w: int, m: int) -> tuple[int, int]:
    n = -(-h // m) * -(-w // m)
    return n, m * m


def flops_prev(h: int, w: int, c: int, s2: int, k: int, bytes_per_scalar: int = 4) -> CostReport:
    _check_positive(H=h, W=w, C=c, S2=s2, k=k)
    n, _ = _prev_layout(h, w, s2)
    k_used = min(k, n)
    hw = h * w
    return CostReport(
        PREV,
        routing_flops=2 * s2 * s2 * c,
        attention_flops=2 * k_used * hw * hw * c // s2,
        peak_intermediate_bytes=peak_attention_memory(PREV, h, w, c, s2, k, bytes_per_scalar),
        dims=dict(H=h, W=w, C=c, window=s2, k=k, k_used=k_used, bytes_per_scalar=bytes_per_scalar),
    )


def flops_ours(h: int, w: int, c: int, m: int, k: int, bytes_per_scalar: int = 4) -> CostReport:
    """Fixed-window costs; sizes that are not multiples of ``m`` count padded tokens."""
    _check_positive(H=h, W=w, C=c, M=m, k=k)
    n, t = _ours_layout(h, w, m)
    k_used = min(k, n)
    return CostReport(
        OURS,
        routing_flops=2 * n * n * c,
        attention_flops=2 * k_used * t * (n * t) * c,
        peak_intermediate_bytes=peak_attention_memory(OURS, h, w, c, m, k, bytes_per_scalar),
        dims=dict(H=h, W=w, C=c, window=m, k=k, k_used=k_used, bytes_per_scalar=bytes_per_scalar),
    )


def cost_report(variant: str, h: int, w: int, c: int, window: int, k: int, bytes_per_scalar: int = 4) -> CostReport:
    if variant == PREV:
        return flops_prev(h, w, c, window, k, bytes_per_scalar)
    if variant == OURS:
        return flops_ours(h, w, c, window, k, bytes_per_scalar)
    raise ValueError(f"unknown variant {variant!r}")


def peak_attention_memory(
    variant: str,
    h: int,
    w: int,
    c: int,
    m_or_s: int,
    k: int,
    bytes_per_scalar: int = 4,
    tiled: bool = False,
    num_heads: int = 1,
    block_rows: int = 64,
) -> int:
    """Peak bytes of attention intermediates (weights excluded).

    Two moments are modelled: while scores are formed, the gathered keys,
    gathered values and the score matrix are live; during the softmax the
    gathered values, the scores and the probabilities are live.  The peak is
    the larger of the two.  ``tiled`` stands in for block-wise (flash-style)
    attention: the full score and probability matrices are replaced by a
    single ``block_rows`` slab of each.

    ``m_or_s`` is the window side ``M`` for the fixed-window variant and the
    region count ``S2`` for the variable-window one.
    """
    _check_positive(H=h, W=w, C=c, window=m_or_s, k=k, bytes_per_scalar=bytes_per_scalar, num_heads=num_heads)
    if variant == OURS:
        n, t = _ours_layout(h, w, m_or_s)
    elif variant == PREV:
        n, t = _prev_layout(h, w, m_or_s)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    k_used = min(k, n)
    keys_per_query = k_used * t
    gathered = n * keys_per_query * c
    query_rows = n * t
    rows = min(block_rows, query_rows) if tiled else query_rows
    scores = num_heads * rows * keys_per_query
    peak = max(2 * gathered + scores, gathered + 2 * scores)
    return peak * bytes_per_scalar


def measure_fgca_flops(cfg: AttentionConfig, h: int, w: int, mode: str = "infer", seed: int = 0) -> dict[str, int]:
    """Run one FGCA forward on random data and return matmul FLOPs per stage.

    Keys: ``projection``, ``routing``, ``attn_scores``, ``attn_values``.
    """
    _check_positive(H=h, W=w)
    c = cfg.embed_dim
    rng = np.random.default_rng(seed)
    weights = {f"{p}.weight": Tensor(rng.normal(0, 0.02, (c, c))) for p in ("q", "k", "v", "proj")}
    x = Tensor(rng.normal(size=(h, w, c)))
    with no_grad(), FlopCounter() as counter:
        fgca_forward(x, cfg, weights, mode)
    counts = dict(counter.counts)
    counts["projection"] = counts.pop("untagged", 0)
    return {key: counts.get(key, 0) for key in ("projection", "routing", "attn_scores", "attn_values")}


def measured_attention_flops(cfg: AttentionConfig, h: int, w: int, mode: str = "infer", seed: int = 0) -> int:
    """Instrumented routing + query-key score FLOPs of one FGCA forward."""
    counts = measure_fgca_flops(cfg, h, w, mode, seed)
    return counts["routing"] + counts["attn_scores"]


def sweep_costs(dim_grid: Iterable[dict], variants: Sequence[str] = VARIANTS, bytes_per_scalar: int = 4) -> list[CostReport]:
    """Evaluate every variant at every grid point.

    Each grid point is a dict with keys ``H, W, C, M, S2, k``.  Rows come out
    grid-major, variants in the order given.
    """
    rows = []
    for dims in dim_grid:
        for variant in variants:
            window = dims["S2"] if variant == PREV else dims["M"]
            rows.append(cost_report(variant, dims["H"], dims["W"], dims["C"], window, dims["k"], bytes_per_scalar))
    return rows


def parse_grid_spec(spec: str, defaults: dict | None = None) -> list[dict]:
    """Parse ``"size=64,128;C=60;M=8;S2=64;k=4"`` into the cartesian grid.

    ``size`` sets square ``H = W``; ``H`` and ``W`` may be given instead.
    Missing keys come from ``defaults``, else ``C=60, M=8, S2=64, k=64``.
    """
    values: dict[str, list[int]] = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, rhs = part.partition("=")
        key = key.strip()
        if not sep or key not in ("size", "H", "W", "C", "M", "S2", "k") or key in values:
            raise ValueError(f"bad grid entry {part!r}")
        try:
            nums = [int(v) for v in rhs.split(",")]
        except ValueError:
            raise ValueError(f"bad grid entry {part!r}") from None
        if any(v <= 0 for v in nums):
            raise ValueError(f"grid values must be positive: {part!r}")
        values[key] = nums
    if "size" in values and ("H" in values or "W" in values):
        raise ValueError("give either size or H/W, not both")
    if "size" not in values and ("H" not in values or "W" not in values):
        raise ValueError("grid needs size=... or both H=... and W=...")
    fallback = {"C": 60, "M": 8, "S2": 64, "k": 64, **(defaults or {})}
    for key in ("C", "M", "S2", "k"):
        values.setdefault(key, [fallback[key]])
    if "size" in values:
        spatial = [(s, s) for s in values["size"]]
    else:
        spatial = list(itertools.product(values["H"], values["W"]))
    grid = []
    for (h, w), c, m, s2, k in itertools.product(spatial, values["C"], values["M"], values["S2"], values["k"]):
        grid.append(dict(H=h, W=w, C=c, M=m, S2=s2, k=k))
    return grid


DEFAULT_GRID = "size=8,16,32,64,128,256,512,1024"


def costs_to_csv(rows: Sequence[CostReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r.row())
    return buf.getvalue()


def find_crossover(rows: Sequence[CostReport]) -> int | None:
    """Smallest ``H*W`` from which the fixed-window total stays strictly cheaper.

    Only grid points where both variants were evaluated with the same
    ``C`` and ``k`` are compared.  ``None`` if there is no such point.
    """
    pairs: dict[tuple, dict[str, CostReport]] = {}
    for r in rows:
        d = r.dims
        pairs.setdefault((d["H"] * d["W"], d["C"], d["k"]), {})[r.variant] = r
    cheaper = []
    for (hw, _, _), pair in sorted(pairs.items()):
        if PREV in pair and OURS in pair:
            cheaper.append((hw, pair[OURS].total_flops < pair[PREV].total_flops))
    crossover = None
    for hw, ok in reversed(cheaper):
        if not ok:
            break
        crossover = hw
    return crossover


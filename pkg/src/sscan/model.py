"""The three-stage super-resolution network.

Shallow extraction (one 3x3 conv) -> deep extraction (stacked residual
blocks, a 3x3 conv, and a global skip from the shallow features) ->
reconstruction (3x3 conv to ``C_in * scale**2`` channels and a pixel shuffle).

Each residual block chains ``n_fgca_blocks`` attention blocks, then a 3x3
conv, and adds its own input.  An attention block is a short sequence of
pre-norm transformer sub-layers, ``x + attn(LN(x))`` then ``x + MLP(LN(x))``,
whose attention kinds follow ``layer_order``:

============== ========================
``FGCA_first``  FGCA, WA, SWA (default)
``WA_first``    WA, SWA, FGCA
``WA_only``     WA, SWA
============== ========================

Feature maps are ``[C, H, W]`` around convolutions and ``[H, W, C]`` inside
attention blocks.  Weights live in a flat ``name -> Tensor`` dict.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import AttentionConfig, fgca_forward, linear, window_attention
from .tensor import (
    ShapeError,
    Tensor,
    add,
    conv2d,
    crop,
    gelu,
    layer_norm,
    no_grad,
    pad_reflect,
    reshape,
    transpose,
)
from .windowing import RegionGrid

WeightStore = dict[str, Tensor]

LAYER_ORDERS = {
    "FGCA_first": ("fgca", "wa", "swa"),
    "WA_first": ("wa", "swa", "fgca"),
    "WA_only": ("wa", "swa"),
}


class ConfigError(ValueError):
    """An out-of-range or inconsistent configuration value."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    embed_dim: int = 60
    n_sscan_blocks: int = 4
    n_fgca_blocks: int = 2
    window_size: int = 8
    num_heads: int = 6
    mlp_ratio: int = 2
    scale: int = 4
    layer_order: str = "FGCA_first"
    topk_train: int = 32
    topk_infer: int = 64
    qkv_bias: bool = True

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.type in ("int", int) and (isinstance(val, bool) or not isinstance(val, int)):
                raise ConfigError(f.name, f"expected an integer, got {val!r}")
        for key in ("in_channels", "embed_dim", "n_sscan_blocks", "n_fgca_blocks", "window_size",
                    "num_heads", "mlp_ratio", "topk_train", "topk_infer"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.scale not in (2, 3, 4):
            raise ConfigError("scale", f"must be one of 2, 3, 4, got {self.scale}")
        if self.embed_dim % self.num_heads:
            raise ConfigError("num_heads", f"embed_dim {self.embed_dim} not divisible by {self.num_heads}")
        if self.layer_order not in LAYER_ORDERS:
            raise ConfigError("layer_order", f"must be one of {sorted(LAYER_ORDERS)}, got {self.layer_order!r}")
        if not isinstance(self.qkv_bias, bool):
            raise ConfigError("qkv_bias", "expected a boolean")

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(
            window_size=self.window_size,
            num_heads=self.num_heads,
            head_dim=self.embed_dim // self.num_heads,
            topk_train=self.topk_train,
            topk_infer=self.topk_infer,
            qkv_bias=self.qkv_bias,
        )

    @property
    def sublayers(self) -> tuple[str, ...]:
        return LAYER_ORDERS[self.layer_order]

    @property
    def shift_size(self) -> int:
        return self.window_size // 2

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# parameter layout


def conv_param_shapes(prefix: str, c_in: int, c_out: int, ksize: int = 3) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (c_out, c_in, ksize, ksize), f"{prefix}.bias": (c_out,)}


def sublayer_param_shapes(prefix: str, kind: str, cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c, hidden, m = cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim, cfg.window_size
    shapes = {f"{prefix}.norm1.weight": (c,), f"{prefix}.norm1.bias": (c,)}
    for p in ("q", "k", "v"):
        shapes[f"{prefix}.attn.{p}.weight"] = (c, c)
        # a key bias only shifts each query's logits by a constant; softmax ignores it
        if cfg.qkv_bias and p != "k":
            shapes[f"{prefix}.attn.{p}.bias"] = (c,)
    shapes[f"{prefix}.attn.proj.weight"] = (c, c)
    shapes[f"{prefix}.attn.proj.bias"] = (c,)
    if kind in ("wa", "swa"):
        shapes[f"{prefix}.attn.rpb"] = ((2 * m - 1) ** 2, cfg.num_heads)
    shapes.update({
        f"{prefix}.norm2.weight": (c,),
        f"{prefix}.norm2.bias": (c,),
        f"{prefix}.mlp.fc1.weight": (c, hidden),
        f"{prefix}.mlp.fc1.bias": (hidden,),
        f"{prefix}.mlp.fc2.weight": (hidden, c),
        f"{prefix}.mlp.fc2.bias": (c,),
    })
    return shapes


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered ``name -> shape`` for every learned tensor of the network."""
    c = cfg.embed_dim
    shapes = conv_param_shapes("conv_first", cfg.in_channels, c)
    for i in range(cfg.n_sscan_blocks):
        for j in range(cfg.n_fgca_blocks):
            for kind in cfg.sublayers:
                shapes.update(sublayer_param_shapes(f"blocks.{i}.layers.{j}.{kind}", kind, cfg))
        shapes.update(conv_param_shapes(f"blocks.{i}.conv", c, c))
    shapes.update(conv_param_shapes("conv_after_body", c, c))
    shapes.update(conv_param_shapes("upsample", c, cfg.in_channels * cfg.scale**2))
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def init_weights(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    """Fresh weights, deterministic in ``seed``.

    Linear weights and position-bias tables: normal(0, 0.02) truncated at two
    standard deviations.  Conv kernels: normal with std ``1/sqrt(fan_in)``.
    Biases zero, norm scales one.
    """
    rng = np.random.default_rng(seed)
    store: WeightStore = {}
    for name, shape in param_shapes(cfg).items():
        if ".norm" in name and name.endswith(".weight"):
            arr = np.ones(shape)
        elif name.endswith(".bias"):
            arr = np.zeros(shape)
        elif len(shape) == 4:
            arr = rng.normal(0.0, 1.0 / math.sqrt(math.prod(shape[1:])), size=shape)
        else:
            arr = _trunc_normal(rng, shape, 0.02)
        store[name] = Tensor(arr, requires_grad=True)
    return store


def check_weights(cfg: ModelConfig, store: WeightStore) -> None:
    """Raise :class:`ConfigError` unless ``store`` matches ``cfg`` exactly."""
    expected = param_shapes(cfg)
    missing = [n for n in expected if n not in store]
    extra = [n for n in store if n not in expected]
    if missing or extra:
        raise ConfigError("weights", f"missing {missing[:3]}, unexpected {extra[:3]}")
    for name, shape in expected.items():
        if store[name].shape != shape:
            raise ConfigError("weights", f"{name} has shape {store[name].shape}, expected {shape}")


def _scope(store: WeightStore, prefix: str) -> dict[str, Tensor]:
    p = prefix + "."
    return {k[len(p):]: v for k, v in store.items() if k.startswith(p)}


# ---------------------------------------------------------------------------
# forward pieces


def _conv(x: Tensor, store: WeightStore, prefix: str) -> Tensor:
    return conv2d(x, store[f"{prefix}.weight"], store[f"{prefix}.bias"], stride=1, pad=1)


def to_hwc(x: Tensor) -> Tensor:
    return transpose(x, (1, 2, 0))


def to_chw(x: Tensor) -> Tensor:
    return transpose(x, (2, 0, 1))


def shallow_extract(i_lr: Tensor, store: WeightStore) -> Tensor:
    return _conv(i_lr, store, "conv_first")


def mlp(x: Tensor, w: dict[str, Tensor]) -> Tensor:
    return linear(gelu(linear(x, w["fc1.weight"], w["fc1.bias"])), w["fc2.weight"], w["fc2.bias"])


def sublayer_forward(x: Tensor, kind: str, cfg: ModelConfig, w: dict[str, Tensor], mode: str) -> Tensor:
    acfg = cfg.attention
    attn_w = _scope(w, "attn")
    y = layer_norm(x, w["norm1.weight"], w["norm1.bias"])
    if kind == "fgca":
        y = fgca_forward(y, acfg, attn_w, mode)
    elif kind == "wa":
        y = window_attention(y, acfg, attn_w, 0)
    elif kind == "swa":
        y = window_attention(y, acfg, attn_w, cfg.shift_size)
    else:
        raise ValueError(f"unknown attention kind {kind!r}")
    x = add(x, y)
    return add(x, mlp(layer_norm(x, w["norm2.weight"], w["norm2.bias"]), _scope(w, "mlp")))


def fgca_block_forward(x: Tensor, cfg: ModelConfig, store: WeightStore, mode: str = "train",
                       prefix: str = "blocks.0.layers.0") -> Tensor:
    """One attention block on ``x[H, W, C]``; sub-layer order from ``cfg.layer_order``."""
    for kind in cfg.sublayers:
        x = sublayer_forward(x, kind, cfg, _scope(store, f"{prefix}.{kind}"), mode)
    return x


def sscan_block_forward(x: Tensor, cfg: ModelConfig, store: WeightStore, mode: str = "train",
                        index: int = 0) -> Tensor:
    """Residual block on ``x[C, H, W]``: attention blocks, 3x3 conv, plus input."""
    h = to_hwc(x)
    for j in range(cfg.n_fgca_blocks):
        h = fgca_block_forward(h, cfg, store, mode, f"blocks.{index}.layers.{j}")
    return add(_conv(to_chw(h), store, f"blocks.{index}.conv"), x)


def deep_extract(f0: Tensor, cfg: ModelConfig, store: WeightStore, mode: str = "train") -> Tensor:
    h = f0
    for i in range(cfg.n_sscan_blocks):
        h = sscan_block_forward(h, cfg, store, mode, i)
    return add(_conv(h, store, "conv_after_body"), f0)


def pixel_shuffle(x: Tensor, scale: int) -> Tensor:
    """``[C*s*s, H, W] -> [C, H*s, W*s]``; channel ``c*s*s + dy*s + dx`` lands at offset ``(dy, dx)``."""
    cs, h, w = x.shape
    if cs % (scale * scale):
        raise ShapeError(f"pixel_shuffle: {cs} channels not divisible by {scale}**2")
    c = cs // (scale * scale)
    t = reshape(x, (c, scale, scale, h, w))
    t = transpose(t, (0, 3, 1, 4, 2))
    return reshape(t, (c, h * scale, w * scale))


def pixel_unshuffle(x: Tensor, scale: int) -> Tensor:
    c, hs, ws = x.shape
    if hs % scale or ws % scale:
        raise ShapeError(f"pixel_unshuffle: {x.shape} not divisible by {scale}")
    h, w = hs // scale, ws // scale
    t = reshape(x, (c, h, scale, w, scale))
    t = transpose(t, (0, 2, 4, 1, 3))
    return reshape(t, (c * scale * scale, h, w))


def reconstruct(f_df: Tensor, scale: int, store: WeightStore) -> Tensor:
    return pixel_shuffle(_conv(f_df, store, "upsample"), scale)


def forward(i_lr: Tensor, cfg: ModelConfig, store: WeightStore, mode: str = "infer") -> Tensor:
    """Super-resolve ``i_lr[C_in, H, W]`` to ``[C_in, scale*H, scale*W]``.

    The input is reflect-padded to a multiple of the window size and the
    output cropped back.
    """
    if i_lr.ndim != 3 or i_lr.shape[0] != cfg.in_channels:
        raise ShapeError(f"forward: expected [{cfg.in_channels}, H, W], got {i_lr.shape}")
    _, h, w = i_lr.shape
    m = cfg.window_size
    x = pad_reflect(i_lr, -h % m, -w % m, axes=(1, 2))
    f0 = shallow_extract(x, store)
    out = reconstruct(deep_extract(f0, cfg, store, mode), cfg.scale, store)
    s = cfg.scale
    if out.shape[1:] != (h * s, w * s):
        out = crop(out, (slice(None), slice(0, h * s), slice(0, w * s)))
    return out


def first_fgca_routing(i_lr: Tensor, cfg: ModelConfig, store: WeightStore, mode: str = "infer"):
    """Routing decision of the first FGCA sub-layer in the network.

    Returns ``(routing, grid)`` where ``grid`` describes the windows on the
    (padded) input; used for attention visualisation.
    """
    if "fgca" not in cfg.sublayers:
        raise ConfigError("layer_order", "configuration has no FGCA layer")
    _, h, w = i_lr.shape
    m = cfg.window_size
    with no_grad():
        x = pad_reflect(i_lr, -h % m, -w % m, axes=(1, 2))
        hwc = to_hwc(shallow_extract(x, store))
        for kind in cfg.sublayers:
            wsub = _scope(store, f"blocks.0.layers.0.{kind}")
            if kind == "fgca":
                y = layer_norm(hwc, wsub["norm1.weight"], wsub["norm1.bias"])
                _, routing = fgca_forward(y, cfg.attention, _scope(wsub, "attn"), mode, return_routing=True)
                return routing, RegionGrid.for_shape(hwc.shape[0], hwc.shape[1], m)
            hwc = sublayer_forward(hwc, kind, cfg, wsub, mode)
    raise AssertionError("unreachable")

"""Fixed-window top-k routed attention (FGCA) and a small SR network on numpy."""

from .attention import AttentionConfig, RoutingResult, fgca_forward, window_attention
from .complexity import cost_report, flops_ours, flops_prev, peak_attention_memory, sweep_costs
from .metrics import ImageU8, psnr, ssim
from .model import ConfigError, ModelConfig, count_params, forward, init_weights
from .optim import train_toy
from .tensor import Tensor, backward, no_grad

__all__ = [
    "AttentionConfig",
    "ConfigError",
    "ImageU8",
    "ModelConfig",
    "RoutingResult",
    "Tensor",
    "backward",
    "cost_report",
    "count_params",
    "fgca_forward",
    "flops_ours",
    "flops_prev",
    "forward",
    "init_weights",
    "no_grad",
    "peak_attention_memory",
    "psnr",
    "ssim",
    "sweep_costs",
    "train_toy",
    "window_attention",
]

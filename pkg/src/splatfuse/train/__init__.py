"""Training objective, optimizer and loop."""

from .losses import (
    LossWeights,
    loss_edge_aware_smooth,
    loss_l1,
    loss_perceptual_proxy,
    ssim,
    total_loss,
)
from .loop import (
    LOG_COLUMNS,
    AdamState,
    TrainConfig,
    TrainResult,
    adam_step,
    context_anchors,
    lr_at,
    read_loss_log,
    render_grown,
    sample_split,
    train_loop,
)

__all__ = [
    "LOG_COLUMNS",
    "AdamState",
    "LossWeights",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "context_anchors",
    "loss_edge_aware_smooth",
    "loss_l1",
    "loss_perceptual_proxy",
    "lr_at",
    "read_loss_log",
    "render_grown",
    "sample_split",
    "ssim",
    "total_loss",
    "train_loop",
]

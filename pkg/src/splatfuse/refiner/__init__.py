"""Anchor decoding, structure-aware refinement and Gaussian growing."""

from .checkpoint import load_checkpoint, read_checkpoint_config, save_checkpoint
from .grow import (
    DEFAULT_BETA,
    RefineResult,
    assemble_refined,
    fuse_opacity,
    fuse_opacity_and_mask,
    grow_gaussians,
    refine_and_grow,
    refine_tensors,
)
from .network import HeadConfig, HeadParams, build_hierarchy, mlp_gs, mlp_grow, refiner_features, refiner_forward

__all__ = [
    "DEFAULT_BETA",
    "HeadConfig",
    "HeadParams",
    "RefineResult",
    "assemble_refined",
    "build_hierarchy",
    "fuse_opacity",
    "fuse_opacity_and_mask",
    "grow_gaussians",
    "load_checkpoint",
    "mlp_gs",
    "mlp_grow",
    "read_checkpoint_config",
    "refine_and_grow",
    "refine_tensors",
    "refiner_features",
    "refiner_forward",
    "save_checkpoint",
]

"""Opacity fusion, pruning and assembly of the refined Gaussian set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from numpy.typing import NDArray

from ..core import GaussianSet, logit
from ..errors import MaskShapeMismatch
from ..quantize import AnchorSet
from .network import (
    LOG_SCALE_MAX,
    LOG_SCALE_MIN,
    HeadParams,
    Hierarchy,
    _unit_quat,
    mlp_gs,
    mlp_grow,
    refiner_features,
    refiner_forward,
)

DEFAULT_BETA = 0.5


def fuse_opacity(alpha_a, d_alpha, s_a, d_s):
    """``(alpha_a + d_alpha) * (1 + tanh(s_a + d_s))`` clamped to [0, 1].

    Works on tensors (differentiable) or arrays.
    """
    if isinstance(alpha_a, torch.Tensor):
        return ((alpha_a + d_alpha) * (1.0 + torch.tanh(s_a + d_s))).clamp(0.0, 1.0)
    a = (np.asarray(alpha_a) + d_alpha) * (1.0 + np.tanh(np.asarray(s_a) + d_s))
    return np.clip(a, 0.0, 1.0)


def fuse_opacity_and_mask(alpha_a, d_alpha, s_a, d_s, beta: float = DEFAULT_BETA):
    """Fused opacity and the keep mask ``alpha_r > beta`` (strict)."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    alpha_r = fuse_opacity(alpha_a, d_alpha, s_a, d_s)
    return alpha_r, alpha_r > beta


def quat_mul_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def grow_gaussians(mu_a, attrs: dict[str, torch.Tensor], res: dict[str, torch.Tensor], s_a) -> dict[str, torch.Tensor]:
    """Combine anchor attributes with residuals, keeping the (K, M) layout."""
    dtype = attrs["quat"].dtype
    mu_a = torch.as_tensor(mu_a, dtype=dtype)
    s_a = torch.as_tensor(s_a, dtype=dtype)
    dq = res["d_quat"].clone()
    dq[..., 0] = dq[..., 0] + 1.0
    quat = _unit_quat(quat_mul_t(attrs["quat"][:, None, :], _unit_quat(dq)))
    alpha_a = torch.sigmoid(attrs["opacity_logit"])[:, None]
    return {
        "mu": mu_a[:, None, :] + res["d_mu"],
        "quat": quat,
        "log_scale": (attrs["log_scale"][:, None, :] + res["d_log_scale"]).clamp(LOG_SCALE_MIN, LOG_SCALE_MAX),
        "alpha": fuse_opacity(alpha_a, res["d_alpha"], s_a[:, None], res["d_s"]),
        "sh": attrs["sh"][:, None] + res["d_sh"],
    }


def assemble_refined(grown: dict, mask) -> GaussianSet:
    """Flatten the kept ``(k, i)`` entries into a :class:`GaussianSet`."""
    g = {k: (v.detach().cpu().numpy() if isinstance(v, torch.Tensor) else np.asarray(v)) for k, v in grown.items()}
    mask = np.asarray(mask.detach().cpu().numpy() if isinstance(mask, torch.Tensor) else mask, dtype=bool)
    if mask.shape != g["alpha"].shape:
        raise MaskShapeMismatch(f"mask shape {mask.shape} != residual grid {g['alpha'].shape}")
    return GaussianSet(
        g["mu"][mask],
        g["quat"][mask],
        g["log_scale"][mask],
        logit(g["alpha"][mask]),
        g["sh"][mask],
    )


def refine_tensors(
    mu_a: NDArray,
    f_a: NDArray,
    s_a: NDArray,
    gamma: float,
    params: HeadParams,
    hierarchy: Hierarchy | None = None,
) -> tuple[dict[str, torch.Tensor], dict[str, torch.Tensor], dict[str, torch.Tensor]]:
    """Differentiable composition MLP_GS -> refiner -> MLP_grow -> grow.

    Returns ``(grown, anchor_attrs, residuals)``.
    """
    dtype = params.dtype
    attrs = mlp_gs(f_a, params, gamma)
    feats = refiner_features(mu_a, attrs, s_a, dtype)
    h = refiner_forward(mu_a, feats, gamma, params, hierarchy)
    res = mlp_grow(h, params, gamma)
    return grow_gaussians(mu_a, attrs, res, s_a), attrs, res


@dataclass
class RefineResult:
    gaussians: GaussianSet
    alpha_r: NDArray  # (K, M)
    keep: NDArray  # (K, M)
    anchors: AnchorSet  # input anchors with the decoded slot filled

    @property
    def grown(self) -> int:
        return self.keep.size

    @property
    def pruned(self) -> int:
        return int(self.keep.size - self.keep.sum())


def refine_and_grow(anchors: AnchorSet, params: HeadParams, beta: float = DEFAULT_BETA) -> RefineResult:
    """Decode, refine and grow Gaussians for a set of anchors.

    The refined per-anchor saliency ``s_a + mean_i(d_s)`` and the anchor
    attributes go into ``anchors.decoded``; the fusion sums are not touched.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    cfg = params.config
    m = cfg.m_grow
    if len(anchors) == 0:
        return RefineResult(GaussianSet.empty(cfg.sh_degree), np.zeros((0, m)), np.zeros((0, m), bool), anchors)
    with torch.no_grad():
        grown, attrs, res = refine_tensors(anchors.mu, anchors.features, anchors.sum_s, anchors.gamma, params)
    alpha_r = grown["alpha"].numpy().astype(np.float64)
    keep = alpha_r > beta
    gaussians = assemble_refined(grown, keep)
    decoded = {k: v.numpy().astype(np.float64) for k, v in attrs.items()}
    decoded["saliency"] = anchors.sum_s + res["d_s"].numpy().astype(np.float64).mean(axis=1)
    out = AnchorSet(anchors.gamma, anchors.codes, anchors.sum_s, anchors.sum_sx, anchors.sum_sf, decoded)
    return RefineResult(gaussians, alpha_r, keep, out)

"""Image and depth metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from numpy.typing import NDArray

from .errors import ShapeMismatch
from .train.losses import ssim as _ssim_t

PSNR_CAP = 99.0


def psnr(img: NDArray, ref: NDArray, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical images report :data:`PSNR_CAP`."""
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} != {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def ssim(img: NDArray, ref: NDArray) -> float:
    with torch.no_grad():
        return float(_ssim_t(np.asarray(img, np.float64), np.asarray(ref, np.float64)))


def _depth_valid(pred, gt, valid):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatch(f"{p.shape} != {g.shape}")
    m = (g > 0) & np.isfinite(g) & np.isfinite(p) & (p > 0)
    if valid is not None:
        m &= np.asarray(valid, bool)
    return p[m], g[m]


def abs_rel(pred: NDArray, gt: NDArray, valid: NDArray | None = None) -> float:
    """``mean(|d - d_gt| / d_gt)`` over pixels valid in both maps."""
    p, g = _depth_valid(pred, gt, valid)
    if p.size == 0:
        return float("nan")
    return float(np.mean(np.abs(p - g) / g))


def delta1(pred: NDArray, gt: NDArray, valid: NDArray | None = None, threshold: float = 1.25) -> float:
    p, g = _depth_valid(pred, gt, valid)
    if p.size == 0:
        return float("nan")
    return float(np.mean(np.maximum(p / g, g / p) < threshold))


@dataclass
class EvalReport:
    name: str
    psnr: float
    ssim: float
    abs_rel: float
    delta1: float
    gaussians: int = 0
    anchors: int = 0
    ms_per_frame: float = 0.0


def evaluate_pair(name, rgb, rgb_gt, depth=None, depth_gt=None, depth_valid=None) -> EvalReport:
    rgb = np.clip(np.asarray(rgb, np.float64), 0.0, 1.0)
    ar = d1 = float("nan")
    if depth is not None and depth_gt is not None:
        ar = abs_rel(depth, depth_gt, depth_valid)
        d1 = delta1(depth, depth_gt, depth_valid)
    return EvalReport(name, psnr(rgb, rgb_gt), ssim(rgb, rgb_gt), ar, d1)

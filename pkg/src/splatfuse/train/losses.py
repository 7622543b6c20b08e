"""Photometric and depth-regularization losses (torch, differentiable)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import EmptyValidMask, ShapeMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    perceptual: float = 0.05
    smooth: float = 0.0005

    def __post_init__(self) -> None:
        if min(self.l1, self.perceptual, self.smooth) < 0:
            raise ValueError("loss weights must be non-negative")


def _check_same(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {tuple(a.shape)} != {tuple(b.shape)}")


def _t(x, like: torch.Tensor | None = None) -> torch.Tensor:
    dtype = like.dtype if like is not None else None
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype if dtype is not None else torch.float64)


def loss_l1(rendered, target, valid=None) -> torch.Tensor:
    """Mean absolute difference over valid pixels (all pixels if ``valid`` is None)."""
    r = _t(rendered)
    t = _t(target, r)
    _check_same(r, t)
    diff = (r - t).abs()
    if valid is None:
        return diff.mean()
    m = _t(valid).to(torch.bool)
    if m.shape != r.shape[:2]:
        raise ShapeMismatch("valid mask must be H x W")
    if not bool(m.any()):
        raise EmptyValidMask("no valid pixels")
    return diff[m].mean()


@lru_cache(maxsize=4)
def _gauss_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(img1, img2, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Mean SSIM of two H x W x 3 (or H x W) images, Gaussian window, valid region only."""
    a = _t(img1)
    b = _t(img2, a)
    _check_same(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c = a.shape[2]
    if min(a.shape[:2]) < window:
        raise ShapeMismatch(f"image smaller than the {window}x{window} SSIM window")
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]
    w = torch.as_tensor(_gauss_window(window, sigma), dtype=a.dtype).expand(c, 1, window, window)

    def filt(z):
        return F.conv2d(z, w, groups=c)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).mean()


def loss_perceptual_proxy(rendered, target) -> torch.Tensor:
    """``(1 - SSIM) / 2``; stands in for a learned perceptual metric."""
    return (1.0 - ssim(rendered, target)) / 2.0


def loss_edge_aware_smooth(depth, rgb, valid=None) -> torch.Tensor:
    """Edge-aware smoothness of mean-normalized depth.

    ``mean(|dx d| exp(-|dx I|)) + mean(|dy d| exp(-|dy I|))`` where image
    gradients are averaged over channels and only pixel pairs with both
    ends valid count.
    """
    d = _t(depth)
    img = _t(rgb, d)
    if img.shape[:2] != d.shape:
        raise ShapeMismatch("depth and image sizes differ")
    m = torch.ones_like(d, dtype=torch.bool) if valid is None else _t(valid).to(torch.bool)
    if not bool(m.any()):
        raise EmptyValidMask("no valid depth pixels")
    mean = d[m].mean()
    if float(mean.detach()) == 0.0:
        raise EmptyValidMask("mean valid depth is zero")
    dn = d / mean
    gx_i = (img[:, 1:] - img[:, :-1]).abs().mean(-1)
    gy_i = (img[1:] - img[:-1]).abs().mean(-1)
    mx = m[:, 1:] & m[:, :-1]
    my = m[1:] & m[:-1]
    tx = ((dn[:, 1:] - dn[:, :-1]).abs() * torch.exp(-gx_i))[mx]
    ty = ((dn[1:] - dn[:-1]).abs() * torch.exp(-gy_i))[my]
    zero = d.new_zeros(())
    return (tx.mean() if tx.numel() else zero) + (ty.mean() if ty.numel() else zero)


def total_loss(render, target, weights: LossWeights = LossWeights(), valid=None) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted photometric + smoothness loss for one target view.

    ``render`` is ``(rgb, depth, alpha)``. The smoothness term is taken over
    pixels with rendered alpha >= 0.5 and is dropped when there are none.
    Returns the differentiable scalar and a dict of detached parts.
    """
    rgb, depth, alpha = render
    tgt = _t(target, rgb)
    l1 = loss_l1(rgb, tgt, valid)
    perc = loss_perceptual_proxy(rgb, tgt) if weights.perceptual else rgb.new_zeros(())
    smooth = rgb.new_zeros(())
    if weights.smooth:
        mask = (alpha.detach() >= 0.5) if valid is None else ((alpha.detach() >= 0.5) & _t(valid).to(torch.bool))
        if bool(mask.any()):
            smooth = loss_edge_aware_smooth(depth, tgt, mask)
    total = weights.l1 * l1 + weights.perceptual * perc + weights.smooth * smooth
    parts = {"l1": float(l1.detach()), "perc": float(perc.detach()), "smooth": float(smooth.detach()), "total": float(total.detach())}
    return total, parts

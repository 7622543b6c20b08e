"""Central finite-difference checks used by the test suites."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import torch


def rel_error(analytic, numeric) -> float:
    """``max|a - n| / max|n|`` over one tensor (0 when both vanish)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.abs(n).max(initial=0.0)
    err = np.abs(a - n).max(initial=0.0)
    if scale == 0.0:
        return float(err)
    return float(err / scale)


def sample_indices(numel: int, k: int | None, rng: np.random.Generator) -> np.ndarray:
    if k is None or k >= numel:
        return np.arange(numel)
    return np.sort(rng.choice(numel, size=k, replace=False))


@torch.no_grad()
def fd_tensor(loss_fn: Callable[[], torch.Tensor], tensor: torch.Tensor, idx, eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. selected flat entries of ``tensor`` (in place)."""
    flat = tensor.view(-1)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = float(flat[i])
        flat[i] = old + eps
        fp = float(loss_fn())
        flat[i] = old - eps
        fm = float(loss_fn())
        flat[i] = old
        out[j] = (fp - fm) / (2 * eps)
    return out


def check_module_grads(
    loss_fn: Callable[[], torch.Tensor],
    tensors: dict[str, torch.Tensor],
    eps: float = 1e-5,
    per_tensor: int | None = 6,
    seed: int = 0,
) -> dict[str, float]:
    """Compare autograd against central differences for each named tensor.

    Returns the relative error per tensor; entries are subsampled to
    ``per_tensor`` random positions to keep runtime bounded.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(tensors.values()), allow_unused=True)
    errors = {}
    for (name, t), g in zip(tensors.items(), grads):
        g = torch.zeros_like(t) if g is None else g
        idx = sample_indices(t.numel(), per_tensor, rng)
        num = fd_tensor(loss_fn, t.data, idx, eps)
        errors[name] = rel_error(g.reshape(-1)[idx].numpy(), num)
    return errors


def splat_cutoff_margin(gaussians, cam) -> float:
    """Smallest distance of any pixel/splat pair from the 3-sigma power cutoff.

    Finite differences straddling that cutoff see a jump, so gradient checks
    should only be run on scenes where this margin is comfortably positive.
    """
    from .render.kernels import POWER_CUTOFF
    from .render.rasterizer import raster_forward

    g = gaussians
    _, r = raster_forward(g.mu, g.quat, g.log_scale, g.opacity, g.sh, cam)
    vis = r.radii > 0
    if not vis.any():
        return float("inf")
    ys, xs = np.mgrid[0 : cam.height, 0 : cam.width]
    px = xs.ravel()[None] + 0.5 - r.means2d[vis, 0, None]
    py = ys.ravel()[None] + 0.5 - r.means2d[vis, 1, None]
    c = r.conics[vis]
    power = -0.5 * (c[:, 0, None] * px * px + c[:, 2, None] * py * py) - c[:, 1, None] * px * py
    return float(np.abs(power - POWER_CUTOFF).min())

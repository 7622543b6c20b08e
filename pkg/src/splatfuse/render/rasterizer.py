"""Tile-based splat rasterizer with an explicit adjoint.

The forward pass culls splats at or behind the near plane, projects the
rest with the EWA Jacobian, bins them into square tiles, and blends each
pixel front to back over the globally depth-sorted list (ties broken by
input index). A splat touches a pixel only if the pixel lies within
Mahalanobis distance 3, so tile size never changes the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from numpy.typing import NDArray

from ..core import Camera, GaussianSet
from . import kernels

Z_NEAR = 0.01
TILE = 16


@dataclass
class RenderTarget:
    rgb: NDArray  # (H, W, 3)
    depth: NDArray  # (H, W), alpha-blended camera depth
    alpha: NDArray  # (H, W)


@dataclass
class _Raster:
    """Forward intermediates needed by the backward pass."""

    means2d: NDArray
    conics: NDArray
    depths: NDArray
    radii: NDArray
    colors: NDArray
    cov3d: NDArray
    offsets: NDArray
    ids: NDArray
    final_T: NDArray
    n_contrib: NDArray


def _camera_arrays(cam: Camera, dtype):
    return (
        np.ascontiguousarray(cam.R, dtype=dtype),
        np.ascontiguousarray(cam.t, dtype=dtype),
        np.ascontiguousarray(cam.center, dtype=dtype),
    )


def _resize_camera(cam: Camera, size) -> Camera:
    if size is None or tuple(size) == (cam.width, cam.height):
        return cam
    w, h = (int(v) for v in size)
    sx, sy = w / cam.width, h / cam.height
    return Camera(cam.fx * sx, cam.fy * sy, cam.cx * sx, cam.cy * sy, cam.pose, w, h)


def raster_forward(mu, quat, log_scale, opacity, sh, cam: Camera, tile: int = TILE, z_near: float = Z_NEAR):
    """Run projection + blending on raw arrays. Returns ``(RenderTarget, _Raster)``."""
    dtype = np.asarray(mu).dtype
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    c = lambda a: np.ascontiguousarray(a, dtype=dtype)  # noqa: E731
    mu, quat, log_scale, opacity, sh = c(mu), c(quat), c(log_scale), c(opacity), c(sh)
    n = len(mu)
    w, h = cam.width, cam.height
    Rc, tc, campos = _camera_arrays(cam, dtype)
    means2d = np.zeros((n, 2), dtype)
    conics = np.zeros((n, 3), dtype)
    depths = np.zeros(n, dtype)
    radii = np.zeros(n, dtype)
    colors = np.zeros((n, 3), dtype)
    cov3d = np.zeros((n, 3, 3), dtype)
    if n:
        kernels.project_forward(
            mu, quat, log_scale, sh, Rc, tc, campos,
            cam.fx, cam.fy, cam.cx, cam.cy, z_near, kernels.BLUR,
            means2d, conics, depths, radii, colors, cov3d,
        )
    order = np.argsort(depths, kind="stable")
    offsets, ids = kernels.bin_tiles(means2d, radii, order, w, h, tile)
    rgb = np.zeros((h, w, 3), dtype)
    depth = np.zeros((h, w), dtype)
    alpha = np.zeros((h, w), dtype)
    final_T = np.ones((h, w), dtype)
    n_contrib = np.zeros((h, w), np.int64)
    kernels.blend_forward(
        means2d, conics, colors, opacity, depths, offsets, ids, w, h, tile,
        rgb, depth, alpha, final_T, n_contrib,
    )
    raster = _Raster(means2d, conics, depths, radii, colors, cov3d, offsets, ids, final_T, n_contrib)
    return RenderTarget(rgb, depth, alpha), raster


def raster_backward(mu, quat, log_scale, opacity, sh, cam: Camera, raster: _Raster, g_rgb, g_depth, g_alpha, tile: int = TILE):
    """Adjoint of :func:`raster_forward`; returns grads for (mu, quat, log_scale, opacity, sh)."""
    dtype = raster.means2d.dtype
    c = lambda a: np.ascontiguousarray(a, dtype=dtype)  # noqa: E731
    mu, quat, log_scale, opacity, sh = c(mu), c(quat), c(log_scale), c(opacity), c(sh)
    n = len(mu)
    w, h = cam.width, cam.height
    d_means2d = np.zeros((n, 2), dtype)
    d_conics = np.zeros((n, 3), dtype)
    d_colors = np.zeros((n, 3), dtype)
    d_opacity = np.zeros(n, dtype)
    d_depths = np.zeros(n, dtype)
    kernels.blend_backward(
        raster.means2d, raster.conics, raster.colors, opacity, raster.depths, raster.offsets, raster.ids,
        w, h, tile, raster.final_T, raster.n_contrib,
        c(g_rgb), c(g_depth), c(g_alpha),
        d_means2d, d_conics, d_colors, d_opacity, d_depths,
    )
    d_mu = np.zeros_like(mu)
    d_quat = np.zeros_like(quat)
    d_log_scale = np.zeros_like(log_scale)
    d_sh = np.zeros_like(sh)
    if n:
        Rc, tc, campos = _camera_arrays(cam, dtype)
        kernels.project_backward(
            mu, quat, log_scale, sh, Rc, tc, campos, cam.fx, cam.fy, cam.cx, cam.cy, kernels.BLUR,
            raster.radii, raster.cov3d, raster.conics,
            d_means2d, d_conics, d_colors, d_depths,
            d_mu, d_quat, d_log_scale, d_sh,
        )
    return d_mu, d_quat, d_log_scale, d_opacity, d_sh


# ---------------------------------------------------------------------------
# NumPy-facing API
# ---------------------------------------------------------------------------


def rasterize(
    gaussians: GaussianSet,
    cam: Camera,
    size: tuple[int, int] | None = None,
    tile: int = TILE,
    dtype=np.float64,
) -> RenderTarget:
    """Render RGB, blended depth and accumulated alpha for one camera."""
    cam = _resize_camera(cam, size)
    g = gaussians
    target, _ = raster_forward(
        g.mu.astype(dtype), g.quat.astype(dtype), g.log_scale.astype(dtype), g.opacity.astype(dtype), g.sh.astype(dtype), cam, tile
    )
    return target


def rasterize_backward(
    gaussians: GaussianSet,
    cam: Camera,
    grad_rgb: NDArray,
    grad_depth: NDArray,
    grad_alpha: NDArray,
    tile: int = TILE,
) -> dict[str, NDArray]:
    """Gradients of ``<grad_rgb, rgb> + <grad_depth, depth> + <grad_alpha, alpha>``.

    Returned keys: ``mu``, ``quat``, ``log_scale``, ``opacity_logit``, ``sh``.
    """
    g = gaussians
    opacity = g.opacity
    _, raster = raster_forward(g.mu, g.quat, g.log_scale, opacity, g.sh, cam, tile)
    d_mu, d_quat, d_ls, d_op, d_sh = raster_backward(
        g.mu, g.quat, g.log_scale, opacity, g.sh, cam, raster, grad_rgb, grad_depth, grad_alpha, tile
    )
    return {
        "mu": d_mu,
        "quat": d_quat,
        "log_scale": d_ls,
        "opacity_logit": d_op * opacity * (1.0 - opacity),
        "sh": d_sh,
    }


def render_depth_map(gaussians: GaussianSet, cam: Camera, min_alpha: float = 0.5, tile: int = TILE) -> tuple[NDArray, NDArray]:
    """Blended depth plus a validity mask (``alpha >= min_alpha``)."""
    target = rasterize(gaussians, cam, tile=tile)
    valid = target.alpha >= min_alpha
    return target.depth, valid


# ---------------------------------------------------------------------------
# Torch bridge
# ---------------------------------------------------------------------------


class _SplatFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, mu, quat, log_scale, opacity, sh, cam, tile):
        arrays = [t.detach().cpu().numpy() for t in (mu, quat, log_scale, opacity, sh)]
        target, raster = raster_forward(*arrays, cam, tile)
        ctx.cam = cam
        ctx.tile = tile
        ctx.raster = raster
        ctx.arrays = arrays
        ctx.device = mu.device
        out = (torch.from_numpy(target.rgb), torch.from_numpy(target.depth), torch.from_numpy(target.alpha))
        return tuple(o.to(mu.device) for o in out)

    @staticmethod
    def backward(ctx, g_rgb, g_depth, g_alpha):
        grads = raster_backward(
            *ctx.arrays, ctx.cam, ctx.raster,
            g_rgb.detach().cpu().numpy(), g_depth.detach().cpu().numpy(), g_alpha.detach().cpu().numpy(), ctx.tile,
        )
        out = [torch.from_numpy(np.ascontiguousarray(g)).to(ctx.device) for g in grads]
        return (*out, None, None)


def render_torch(mu, quat, log_scale, opacity, sh, cam: Camera, tile: int = TILE):
    """Differentiable render returning ``(rgb, depth, alpha)`` tensors.

    ``opacity`` is the activated opacity in [0, 1].
    """
    return _SplatFunction.apply(mu, quat, log_scale, opacity, sh, cam, tile)

"""Anchor decoding heads and the serialized patch-attention U-Net."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from numpy.typing import NDArray
from torch import nn

from ..core import sh_coeff_count
from ..serialize import Curve, grid_pool_index, serialize_order

# stage i uses the configured curve on even stages, the other one on odd
# stages, with the axis order rotated every second stage
_AXIS_ORDERS = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
LOG_SCALE_MIN = -10.0
LOG_SCALE_MAX = 2.0


@dataclass(frozen=True)
class HeadConfig:
    latent_dim: int = 32
    h_dim: int = 64
    m_grow: int = 4
    sh_degree: int = 1
    stages: int = 5
    heads: int = 4
    patch_size: int = 32
    curve: str = "hilbert"
    init_opacity: float = 0.4
    init_scale: float = 0.5  # initial splat sigma, in voxel units

    def __post_init__(self) -> None:
        if self.stages < 1 or self.m_grow < 1 or self.heads < 1:
            raise ValueError("stages, m_grow and heads must be >= 1")
        if not 0 <= self.sh_degree <= 3:
            raise ValueError("sh_degree must lie in [0, 3]")
        for w in self.widths:
            if w % self.heads:
                raise ValueError(f"stage width {w} is not divisible by {self.heads} heads")
        Curve(self.curve)

    @property
    def n_sh(self) -> int:
        return sh_coeff_count(self.sh_degree)

    @property
    def widths(self) -> tuple[int, ...]:
        # (h, 2h, 2h, 4h, 4h, ...)
        return tuple(self.h_dim * 2 ** ((i + 1) // 2) for i in range(self.stages))

    @property
    def gs_width(self) -> int:
        return 4 + 3 + 1 + 3 * self.n_sh

    @property
    def grow_width(self) -> int:
        return 3 + 4 + 3 + 1 + 3 * self.n_sh + 1

    @property
    def feature_width(self) -> int:
        # mu, quat, log_scale, alpha, sh, saliency
        return 3 + 4 + 3 + 1 + 3 * self.n_sh + 1

    def with_(self, **kw) -> HeadConfig:
        return replace(self, **kw)


class Block(nn.Module):
    """Pre-norm patch attention followed by a GELU MLP (expansion 2)."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, 2 * dim)
        self.fc2 = nn.Linear(2 * dim, dim)

    def attend(self, x: torch.Tensor, order: NDArray, inverse: NDArray, patch: int) -> torch.Tensor:
        n, d = x.shape
        p = min(patch, n)
        pad = (-n) % p
        xs = x[torch.from_numpy(order)]
        if pad:
            xs = torch.cat([xs, xs.new_zeros(pad, d)])
        hd = d // self.heads
        qkv = self.qkv(xs).view(-1, p, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(-1, -2)) * (hd**-0.5)
        if pad:
            mask = torch.zeros(att.shape[0], 1, 1, p, dtype=att.dtype)
            mask[-1, :, :, p - pad :] = -math.inf
            att = att + mask
        y = (att.softmax(-1) @ v).transpose(1, 2).reshape(-1, d)[:n]
        return self.proj(y)[torch.from_numpy(inverse)]

    def forward(self, x: torch.Tensor, order: NDArray, inverse: NDArray, patch: int) -> torch.Tensor:
        x = x + self.attend(self.norm1(x), order, inverse, patch)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class _Down(nn.Module):
    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.lin = nn.Linear(d_in, d_out)
        self.norm = nn.LayerNorm(d_out)

    def forward(self, x):
        return F.gelu(self.norm(self.lin(x)))


class HeadParams(nn.Module):
    """All trainable weights: MLP_GS, the refiner U-Net and MLP_grow."""

    def __init__(self, config: HeadConfig = HeadConfig(), seed: int = 0):
        super().__init__()
        self.config = cfg = config
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            h = cfg.h_dim
            self.gs1 = nn.Linear(cfg.latent_dim, h)
            self.gs2 = nn.Linear(h, cfg.gs_width)
            w = cfg.widths
            self.embed = _Down(cfg.feature_width, w[0])
            self.enc = nn.ModuleList(Block(w[i], cfg.heads) for i in range(cfg.stages))
            self.down = nn.ModuleList(_Down(w[i - 1], w[i]) for i in range(1, cfg.stages))
            self.up = nn.ModuleList(nn.Linear(w[i + 1], w[i]) for i in range(cfg.stages - 1))
            self.dec = nn.ModuleList(Block(w[i], cfg.heads) for i in range(cfg.stages - 1))
            self.grow1 = nn.Linear(h, h)
            self.grow2 = nn.Linear(h, cfg.m_grow * cfg.grow_width)
        finally:
            torch.random.set_rng_state(gen_state)
        self._init_outputs()

    @torch.no_grad()
    def _init_outputs(self) -> None:
        cfg = self.config
        # near-identity start: anchors decode to mid-opacity splats about half a voxel wide,
        # growing residuals start small
        self.gs2.weight.mul_(0.1)
        self.gs2.bias.zero_()
        self.gs2.bias[7] = math.log(cfg.init_opacity / (1 - cfg.init_opacity))
        self.gs2.bias[4:7] = math.log(cfg.init_scale)
        self.grow2.weight.mul_(0.01)
        self.grow2.bias.zero_()

    @property
    def dtype(self) -> torch.dtype:
        return self.gs1.weight.dtype

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


# ---------------------------------------------------------------------------
# MLP_GS
# ---------------------------------------------------------------------------


def _unit_quat(q: torch.Tensor) -> torch.Tensor:
    n = q.norm(dim=-1, keepdim=True)
    ident = torch.zeros_like(q)
    ident[..., 0] = 1.0
    safe = torch.where(n > 1e-12, n, torch.ones_like(n))
    return torch.where(n > 1e-12, q / safe, ident)


def mlp_gs(f_a, params: HeadParams, gamma: float | None = None) -> dict[str, torch.Tensor]:
    """Decode anchor latents into anchor Gaussian attributes.

    Returns ``quat`` (K, 4) unit norm, ``log_scale`` (K, 3) clamped to
    [-10, 2], ``opacity_logit`` (K,) and ``sh`` (K, n_sh, 3). With
    ``gamma`` given the scale output is relative to the voxel size.
    """
    cfg = params.config
    f = torch.as_tensor(f_a, dtype=params.dtype)
    out = params.gs2(F.gelu(params.gs1(f)))
    quat = out[:, 0:4].clone()
    quat[:, 0] = quat[:, 0] + 1.0
    ls = out[:, 4:7]
    if gamma is not None:
        ls = ls + math.log(gamma)
    return {
        "quat": _unit_quat(quat),
        "log_scale": ls.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX),
        "opacity_logit": out[:, 7],
        "sh": out[:, 8:].reshape(-1, cfg.n_sh, 3),
    }


# ---------------------------------------------------------------------------
# U-Net refiner
# ---------------------------------------------------------------------------


@dataclass
class Hierarchy:
    """Serialization orders and pooling maps for every stage."""

    orders: list[NDArray]
    inverses: list[NDArray]
    parents: list[NDArray]  # parents[i] maps level-i tokens to level i+1
    counts: list[NDArray]
    sizes: list[int]


def stage_curve(config: HeadConfig, stage: int) -> tuple[Curve, tuple[int, int, int]]:
    first = Curve(config.curve)
    other = Curve.MORTON if first is Curve.HILBERT else Curve.HILBERT
    return (first if stage % 2 == 0 else other), _AXIS_ORDERS[(stage // 2) % 3]


def build_hierarchy(positions: NDArray, gamma: float, config: HeadConfig) -> Hierarchy:
    pos = np.asarray(positions, dtype=np.float64)
    orders, inverses, parents, counts, sizes = [], [], [], [], []
    for i in range(config.stages):
        grid = gamma * 2.0**i
        if i > 0:
            pool = grid_pool_index(pos, grid)
            parents.append(pool.parent)
            counts.append(pool.counts)
            pos = pool.positions
        curve, axes = stage_curve(config, i)
        batch = serialize_order(pos, grid, curve, axis_order=axes, tie_break="position")
        orders.append(batch.permutation)
        inverses.append(batch.inverse)
        sizes.append(len(pos))
    return Hierarchy(orders, inverses, parents, counts, sizes)


def _pool_mean(x: torch.Tensor, parent: NDArray, counts: NDArray) -> torch.Tensor:
    out = x.new_zeros(len(counts), x.shape[1])
    out.index_add_(0, torch.from_numpy(parent), x)
    return out / torch.from_numpy(counts).to(x.dtype)[:, None]


def refiner_features(mu, attrs: dict[str, torch.Tensor], saliency, dtype) -> torch.Tensor:
    """Per-anchor input vector ``concat(mu, quat, log_scale, alpha, sh, s)``."""
    k = attrs["quat"].shape[0]
    return torch.cat(
        [
            torch.as_tensor(mu, dtype=dtype),
            attrs["quat"],
            attrs["log_scale"],
            torch.sigmoid(attrs["opacity_logit"])[:, None],
            attrs["sh"].reshape(k, -1),
            torch.as_tensor(saliency, dtype=dtype).reshape(k, 1),
        ],
        dim=1,
    )


def refiner_forward(
    positions: NDArray,
    features: torch.Tensor,
    gamma: float,
    params: HeadParams,
    hierarchy: Hierarchy | None = None,
) -> torch.Tensor:
    """Refined per-anchor latent ``(K, h_dim)``.

    Encoder: embed, then per stage an attention block (stage 0 at the voxel
    grid, stage i after grid pooling at ``gamma * 2**i``). Decoder: unpool to
    the finer level, add the encoder skip, attention block.
    """
    cfg = params.config
    if hierarchy is None:
        hierarchy = build_hierarchy(positions, gamma, cfg)
    hi = hierarchy
    x = params.embed(torch.as_tensor(features, dtype=params.dtype))
    skips = []
    for i in range(cfg.stages):
        if i > 0:
            x = params.down[i - 1](_pool_mean(x, hi.parents[i - 1], hi.counts[i - 1]))
        x = params.enc[i](x, hi.orders[i], hi.inverses[i], cfg.patch_size)
        skips.append(x)
    for i in range(cfg.stages - 2, -1, -1):
        x = params.up[i](x)[torch.from_numpy(hi.parents[i])] + skips[i]
        x = params.dec[i](x, hi.orders[i], hi.inverses[i], cfg.patch_size)
    return x


# ---------------------------------------------------------------------------
# MLP_grow
# ---------------------------------------------------------------------------


def mlp_grow(h_a: torch.Tensor, params: HeadParams, gamma: float) -> dict[str, torch.Tensor]:
    """Decode ``M`` residual Gaussians per anchor.

    Shapes: ``d_mu`` (K, M, 3) bounded by ``gamma`` through tanh,
    ``d_quat`` (K, M, 4), ``d_log_scale`` (K, M, 3), ``d_alpha`` (K, M),
    ``d_sh`` (K, M, n_sh, 3), ``d_s`` (K, M).
    """
    cfg = params.config
    k = h_a.shape[0]
    out = params.grow2(F.gelu(params.grow1(h_a))).view(k, cfg.m_grow, cfg.grow_width)
    ns = 3 * cfg.n_sh
    return {
        "d_mu": gamma * torch.tanh(out[..., 0:3]),
        "d_quat": out[..., 3:7],
        "d_log_scale": out[..., 7:10],
        "d_alpha": out[..., 10],
        "d_sh": out[..., 11 : 11 + ns].reshape(k, cfg.m_grow, cfg.n_sh, 3),
        "d_s": out[..., 11 + ns],
    }

"""Adam, learning-rate schedule and the context/target training loop."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ShapeMismatch
from ..ingest.frames import PixelFrame
from ..quantize import quantize_frame
from ..refiner import HeadParams, refine_tensors
from ..render import render_torch
from .losses import LossWeights, total_loss

LOG_COLUMNS = ("iter", "l1", "perc", "smooth", "total", "gaussians", "anchors", "seconds")


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update, in place. Missing grads count as zero."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params


def lr_at(it: int, base: float, warmup: int, total: int, final_ratio: float = 0.01) -> float:
    """Linear warmup over ``warmup`` steps, then cosine decay to ``final_ratio * base``."""
    if warmup > 0 and it < warmup:
        return base * (it + 1) / warmup
    span = max(total - warmup, 1)
    frac = min(max(it - warmup, 0) / span, 1.0)
    return base * (final_ratio + (1 - final_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class TrainConfig:
    lr: float = 1e-5
    warmup: int = 100
    iterations: int = 2000
    n_views: int = 8
    min_context: int = 2
    max_context: int = 6
    seed: int = 0
    beta: float = 0.0  # no pruning while training; the mask has no gradient
    gamma: float = 0.02
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self) -> None:
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if not 2 <= self.min_context <= self.max_context < self.n_views:
            raise ValueError("need 2 <= min_context <= max_context < n_views")
        if self.iterations < 0 or self.lr <= 0 or self.gamma <= 0:
            raise ValueError("iterations, lr and gamma must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_split(rng: np.random.Generator, n: int, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Random context/target split with ``lo <= |context| <= hi``."""
    k = int(rng.integers(lo, hi + 1))
    perm = rng.permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])


@dataclass
class _Prepared:
    frames: list[PixelFrame]
    points: list[tuple[np.ndarray, np.ndarray, np.ndarray]]


def _prepare(frames: list[PixelFrame]) -> _Prepared:
    return _Prepared(frames, [f.points() for f in frames])


def context_anchors(prep: _Prepared, context, gamma: float):
    x = np.concatenate([prep.points[i][0] for i in context])
    s = np.concatenate([prep.points[i][1] for i in context])
    f = np.concatenate([prep.points[i][2] for i in context])
    return quantize_frame(x, s, f, gamma)


def render_grown(grown: dict[str, torch.Tensor], cam, beta: float = 0.0):
    """Render the flattened (K*M) grown set; gaussians with alpha <= beta are dropped."""
    flat = {k: v.reshape(-1, *v.shape[2:]) for k, v in grown.items()}
    if beta > 0:
        keep = torch.nonzero(flat["alpha"].detach() > beta).reshape(-1)
        flat = {k: v[keep] for k, v in flat.items()}
    return render_torch(flat["mu"], flat["quat"], flat["log_scale"], flat["alpha"], flat["sh"], cam)


def iteration_loss(params: HeadParams, prep: _Prepared, context, targets, config: TrainConfig):
    anchors = context_anchors(prep, context, config.gamma)
    grown, _, _ = refine_tensors(anchors.mu, anchors.features, anchors.sum_s, anchors.gamma, params)
    loss = None
    parts = {"l1": 0.0, "perc": 0.0, "smooth": 0.0, "total": 0.0}
    for j in targets:
        fr = prep.frames[j]
        out = render_grown(grown, fr.camera, config.beta)
        lj, pj = total_loss(out, torch.from_numpy(fr.rgb), config.weights, torch.from_numpy(fr.valid))
        loss = lj if loss is None else loss + lj
        for k in parts:
            parts[k] += pj[k] / len(targets)
    n_gauss = int((grown["alpha"].detach() > config.beta).sum())
    return loss / len(targets), parts, n_gauss, len(anchors)


@dataclass
class TrainResult:
    params: HeadParams
    log: list[dict]


def train_loop(
    sequences: list[list[PixelFrame]],
    config: TrainConfig,
    params: HeadParams,
    log_path=None,
    checkpoint_path=None,
    progress=None,
) -> TrainResult:
    """Optimize the head parameters on random context/target splits.

    Each iteration samples one sequence and a split, quantizes the context
    frames, grows Gaussians, renders every target view and takes one Adam
    step on the mean target loss.
    """
    if not sequences:
        raise ValueError("need at least one training sequence")
    for seq in sequences:
        if len(seq) != config.n_views:
            raise ValueError(f"sequence has {len(seq)} views, config expects {config.n_views}")
    rng = np.random.default_rng(config.seed)
    prepared = [_prepare(seq) for seq in sequences]
    plist = list(params.parameters())
    state = AdamState()
    log: list[dict] = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        for it in range(config.iterations):
            t0 = time.perf_counter()
            prep = prepared[int(rng.integers(len(prepared)))]
            context, targets = sample_split(rng, config.n_views, config.min_context, config.max_context)
            params.zero_grad(set_to_none=True)
            loss, parts, n_gauss, n_anchor = iteration_loss(params, prep, context, targets, config)
            loss.backward()
            adam_step(plist, [p.grad for p in plist], state, lr_at(it, config.lr, config.warmup, config.iterations))
            row = {"iter": it, **parts, "gaussians": n_gauss, "anchors": n_anchor, "seconds": time.perf_counter() - t0}
            log.append(row)
            if writer is not None:
                writer.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})
            if progress is not None:
                progress(row)
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path is not None:
        from ..refiner import save_checkpoint

        save_checkpoint(params, checkpoint_path)
    return TrainResult(params, log)


def read_loss_log(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))

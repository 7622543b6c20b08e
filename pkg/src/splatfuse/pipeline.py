"""Online per-frame reconstruction and census bookkeeping."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import GaussianSet
from .ingest.frames import PixelFrame
from .quantize import (
    DEFAULT_GAMMA,
    DEFAULT_MARGIN,
    AnchorStore,
    frustum_extract,
    frustum_mask,
    merge_incremental,
    merge_sets,
    quantize_frame,
)
from .refiner import DEFAULT_BETA, HeadParams, refine_and_grow

CENSUS_COLUMNS = (
    "frame_id",
    "new_points",
    "new_anchors",
    "extracted",
    "merged_store_size",
    "grown_gaussians",
    "pruned",
    "ms_quantize",
    "ms_refine",
    "ms_total",
)


@dataclass(frozen=True)
class PipelineConfig:
    gamma: float = DEFAULT_GAMMA
    beta: float = DEFAULT_BETA
    margin: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass
class CensusRow:
    frame_id: int
    new_points: int
    new_anchors: int
    extracted: int
    merged_store_size: int
    grown_gaussians: int
    pruned: int
    ms_quantize: float
    ms_refine: float
    ms_total: float


@dataclass
class PipelineState:
    params: HeadParams
    config: PipelineConfig = field(default_factory=PipelineConfig)
    store: AnchorStore | None = None
    census: list[CensusRow] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.store is None:
            self.store = AnchorStore(self.config.gamma, self.params.config.latent_dim)
        elif not np.isclose(self.store.gamma, self.config.gamma, rtol=0, atol=1e-15):
            raise ValueError("store voxel size differs from the pipeline config")


def process_frame(state: PipelineState, frame: PixelFrame) -> tuple[PipelineState, GaussianSet]:
    """Fold one frame into the store and return the refined Gaussians near its view."""
    cfg = state.config
    t0 = time.perf_counter()
    x, s, f = frame.points()
    new = quantize_frame(x, s, f, cfg.gamma)
    extracted = frustum_extract(state.store, frame.camera, cfg.margin)
    merged = merge_sets(extracted, new)
    t1 = time.perf_counter()
    result = refine_and_grow(merged, state.params, cfg.beta)
    t2 = time.perf_counter()
    merge_incremental(state.store, result.anchors, len(x))
    t3 = time.perf_counter()
    state.census.append(
        CensusRow(
            frame.frame_id,
            len(x),
            len(new),
            len(extracted),
            len(state.store),
            len(result.gaussians),
            result.pruned,
            1e3 * (t1 - t0),
            1e3 * (t2 - t1),
            1e3 * (t3 - t0),
        )
    )
    return state, result.gaussians


def extract_all(state: PipelineState, cameras) -> GaussianSet:
    """Refine the whole store, one frustum-sized chunk per camera.

    Anchors are refined in the first chunk whose camera sees them; anything
    outside every frustum goes in a final chunk.
    """
    anchors = state.store.anchors
    done = np.zeros(len(anchors), bool)
    parts = []
    for cam in cameras:
        m = frustum_mask(anchors, cam, state.config.margin) & ~done
        if m.any():
            parts.append(refine_and_grow(anchors.subset(m), state.params, state.config.beta).gaussians)
            done |= m
    if not done.all():
        parts.append(refine_and_grow(anchors.subset(~done), state.params, state.config.beta).gaussians)
    if not parts:
        return GaussianSet.empty(state.params.config.sh_degree)
    return GaussianSet.concat(parts)


@dataclass
class Reconstruction:
    gaussians: GaussianSet
    state: PipelineState

    @property
    def census(self) -> list[CensusRow]:
        return self.state.census


def reconstruct_sequence(frames: list[PixelFrame], params: HeadParams, config: PipelineConfig = PipelineConfig()) -> Reconstruction:
    """Run :func:`process_frame` over the sequence, then refine the final store."""
    if not frames:
        raise ValueError("need at least one frame")
    state = PipelineState(params, config)
    for fr in frames:
        process_frame(state, fr)
    return Reconstruction(extract_all(state, [fr.camera for fr in frames]), state)


def write_census(rows: list[CensusRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CENSUS_COLUMNS)
        w.writeheader()
        for r in rows:
            d = asdict(r)
            for k in ("ms_quantize", "ms_refine", "ms_total"):
                d[k] = f"{d[k]:.3f}"
            w.writerow(d)


def read_census(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

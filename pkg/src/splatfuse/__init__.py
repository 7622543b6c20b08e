"""Online anchor-based Gaussian splat reconstruction from streamed pixel-aligned predictions."""

from .core import Camera, Gaussian3D, GaussianSet, RigidTransform
from .ingest import PixelFrame, SceneSpec, synth_sequence
from .pipeline import PipelineConfig, PipelineState, process_frame, reconstruct_sequence
from .quantize import AnchorSet, AnchorStore, quantize_frame
from .refiner import HeadConfig, HeadParams, refine_and_grow
from .render import RenderTarget, rasterize

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "AnchorStore",
    "Camera",
    "Gaussian3D",
    "GaussianSet",
    "HeadConfig",
    "HeadParams",
    "PipelineConfig",
    "PipelineState",
    "PixelFrame",
    "RenderTarget",
    "RigidTransform",
    "SceneSpec",
    "process_frame",
    "quantize_frame",
    "rasterize",
    "reconstruct_sequence",
    "refine_and_grow",
    "synth_sequence",
]

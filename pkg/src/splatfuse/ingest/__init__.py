"""Frame I/O, the synthetic oracle backbone, and focal estimation."""

from .focal import estimate_focal_weiszfeld
from .frames import (
    Manifest,
    ManifestEntry,
    PixelFrame,
    load_depth,
    load_frame,
    softplus,
    write_depth,
    write_frame,
)
from .synth import SceneSpec, desk_scene, loop_scene, pan_scene, plane_scene, synth_sequence

__all__ = [
    "Manifest",
    "ManifestEntry",
    "PixelFrame",
    "SceneSpec",
    "desk_scene",
    "estimate_focal_weiszfeld",
    "load_depth",
    "load_frame",
    "loop_scene",
    "pan_scene",
    "plane_scene",
    "softplus",
    "synth_sequence",
    "write_depth",
    "write_frame",
]

"""CPU splat rasterizer (forward and adjoint) plus image file helpers."""

from .images import read_ppm, to_uint8, write_ppm
from .rasterizer import (
    RenderTarget,
    rasterize,
    rasterize_backward,
    render_depth_map,
    render_torch,
)

__all__ = [
    "RenderTarget",
    "rasterize",
    "rasterize_backward",
    "read_ppm",
    "render_depth_map",
    "render_torch",
    "to_uint8",
    "write_ppm",
]

"""Per-frame backbone output and its on-disk formats.

Frame file (little-endian)::

    "SLNF" | u32 version=1 | u32 H | u32 W | u32 C
    f32 rgb[H,W,3] | f32 pointmap[H,W,3] | f32 latent[H,W,C] | f32 saliency_logit[H,W]
    f32 R[3,3] | f32 t[3] | f32 fx, fy, cx, cy | u32 width, height

The camera block is stored in f32; on load the rotation is snapped back to
the nearest orthonormal matrix in f64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ..core import Camera, RigidTransform, nearest_rotation
from ..errors import MalformedFile

FRAME_MAGIC = b"SLNF"
FRAME_VERSION = 1
DEPTH_MAGIC = b"SLND"
_HEADER = struct.Struct("<4sIIII")
_CAMERA = struct.Struct("<12f4f2I")


def softplus(x: NDArray) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(np.logaddexp(0.0, x), np.finfo(np.float64).tiny)


@dataclass
class PixelFrame:
    rgb: NDArray[np.float32]  # (H, W, 3) in [0, 1]
    pointmap_world: NDArray[np.float32]  # (H, W, 3)
    latent: NDArray[np.float32]  # (H, W, C)
    saliency_logit: NDArray[np.float32]  # (H, W)
    camera: Camera
    frame_id: int = 0

    def __post_init__(self) -> None:
        self.rgb = np.ascontiguousarray(self.rgb, dtype=np.float32)
        self.pointmap_world = np.ascontiguousarray(self.pointmap_world, dtype=np.float32)
        self.latent = np.ascontiguousarray(self.latent, dtype=np.float32)
        self.saliency_logit = np.ascontiguousarray(self.saliency_logit, dtype=np.float32)
        h, w = self.rgb.shape[:2]
        if (
            self.rgb.shape != (h, w, 3)
            or self.pointmap_world.shape != (h, w, 3)
            or self.latent.shape[:2] != (h, w)
            or self.latent.ndim != 3
            or self.saliency_logit.shape != (h, w)
        ):
            raise ValueError("frame grids must share one H x W")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]

    @property
    def latent_dim(self) -> int:
        return self.latent.shape[2]

    @property
    def saliency(self) -> NDArray[np.float64]:
        return softplus(self.saliency_logit)

    @property
    def valid(self) -> NDArray[np.bool_]:
        """Pixels carrying a finite 3-D point."""
        return np.isfinite(self.pointmap_world).all(-1)

    def points(self) -> tuple[NDArray, NDArray, NDArray]:
        """Flattened ``(x, s, f)`` triples of the valid pixels."""
        m = self.valid
        return (
            self.pointmap_world[m].astype(np.float64),
            self.saliency[m],
            self.latent[m].astype(np.float64),
        )

    def depth(self) -> NDArray[np.float64]:
        """Camera-frame depth of the pointmap (0 where invalid)."""
        p = self.pointmap_world.astype(np.float64) @ self.camera.R.T + self.camera.t
        return np.where(self.valid, p[..., 2], 0.0)


def _camera_bytes(cam: Camera) -> bytes:
    return _CAMERA.pack(
        *cam.R.reshape(-1), *cam.t, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
    )


def _camera_from(values: tuple) -> Camera:
    R = nearest_rotation(np.array(values[:9], dtype=np.float64).reshape(3, 3))
    t = np.array(values[9:12], dtype=np.float64)
    fx, fy, cx, cy = (float(v) for v in values[12:16])
    w, h = values[16:18]
    return Camera(fx, fy, cx, cy, RigidTransform(R, t), int(w), int(h))


def frame_to_bytes(frame: PixelFrame) -> bytes:
    h, w = frame.shape
    parts = [
        _HEADER.pack(FRAME_MAGIC, FRAME_VERSION, h, w, frame.latent_dim),
        frame.rgb.astype("<f4").tobytes(),
        frame.pointmap_world.astype("<f4").tobytes(),
        frame.latent.astype("<f4").tobytes(),
        frame.saliency_logit.astype("<f4").tobytes(),
        _camera_bytes(frame.camera),
    ]
    return b"".join(parts)


def frame_from_bytes(data: bytes, frame_id: int = 0) -> PixelFrame:
    if len(data) < _HEADER.size:
        raise MalformedFile("truncated frame header")
    magic, version, h, w, c = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise MalformedFile(f"bad frame magic {magic!r}")
    if version != FRAME_VERSION:
        raise MalformedFile(f"unsupported frame version {version}")
    if h == 0 or w == 0 or c == 0:
        raise MalformedFile("zero-sized frame")
    sizes = [h * w * 3, h * w * 3, h * w * c, h * w]
    expected = _HEADER.size + 4 * sum(sizes) + _CAMERA.size
    if len(data) != expected:
        raise MalformedFile(f"frame payload is {len(data)} bytes, header implies {expected}")
    off = _HEADER.size
    arrays = []
    for n in sizes:
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32))
        off += 4 * n
    cam_values = _CAMERA.unpack_from(data, off)
    if (cam_values[17], cam_values[16]) != (h, w):
        raise MalformedFile("camera image size disagrees with frame header")
    try:
        camera = _camera_from(cam_values)
    except ValueError as exc:
        raise MalformedFile(f"invalid camera block: {exc}") from exc
    return PixelFrame(
        arrays[0].reshape(h, w, 3),
        arrays[1].reshape(h, w, 3),
        arrays[2].reshape(h, w, c),
        arrays[3].reshape(h, w),
        camera,
        frame_id,
    )


def write_frame(frame: PixelFrame, path) -> None:
    Path(path).write_bytes(frame_to_bytes(frame))


def load_frame(path, frame_id: int = 0) -> PixelFrame:
    return frame_from_bytes(Path(path).read_bytes(), frame_id)


# ---------------------------------------------------------------------------
# Depth rasters and cameras
# ---------------------------------------------------------------------------


def write_depth(depth: NDArray, path) -> None:
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    Path(path).write_bytes(struct.pack("<4sII", DEPTH_MAGIC, h, w) + depth.tobytes())


def load_depth(path) -> NDArray[np.float32]:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise MalformedFile("truncated depth header")
    magic, h, w = struct.unpack_from("<4sII", data)
    if magic != DEPTH_MAGIC:
        raise MalformedFile(f"bad depth magic {magic!r}")
    if len(data) != 12 + 4 * h * w:
        raise MalformedFile("depth payload size does not match header")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).copy()


def camera_to_dict(cam: Camera) -> dict:
    return {
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "width": cam.width,
        "height": cam.height,
        "rotation": cam.R.tolist(),
        "translation": cam.t.tolist(),
    }


def camera_from_dict(d: dict) -> Camera:
    pose = RigidTransform(np.array(d["rotation"], dtype=np.float64), np.array(d["translation"], dtype=np.float64))
    return Camera(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), pose, int(d["width"]), int(d["height"]))


# ---------------------------------------------------------------------------
# Sequence manifest (JSON)
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    path: Path
    frame_id: int
    depth: Path | None = None


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    scene_units: str = "m"
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.entries)

    def frames(self) -> list[PixelFrame]:
        return [load_frame(self.root / e.path, e.frame_id) for e in self.entries]

    def depths(self) -> list[NDArray[np.float32] | None]:
        return [None if e.depth is None else load_depth(self.root / e.depth) for e in self.entries]

    def save(self, path) -> None:
        doc = {
            "version": 1,
            "scene_units": self.scene_units,
            "frames": [
                {"path": str(e.path), "frame_id": e.frame_id, **({"depth": str(e.depth)} if e.depth else {})}
                for e in self.entries
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> Manifest:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
            entries = [
                ManifestEntry(Path(f["path"]), int(f["frame_id"]), Path(f["depth"]) if f.get("depth") else None)
                for f in doc["frames"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFile(f"malformed manifest {path}: {exc}") from exc
        return cls(entries, doc.get("scene_units", "m"), path.parent)

"""Synthetic stand-in for the reconstruction backbone.

Scenes are made of textured planes, boxes and spheres. Every frame is
produced by exact ray casting, so pointmaps and depths are analytic; the
per-pixel latent is a fixed, seed-independent function of color, normal,
position and image gradient, which gives the decoding heads something to
learn from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from ..core import Camera, RigidTransform, look_at
from ..errors import EmptyScene
from .frames import PixelFrame, camera_from_dict

LATENT_DIM = 32
_RAW_FEATURES = 32
_LIGHT = np.array([0.3, -0.8, -0.5]) / np.linalg.norm([0.3, -0.8, -0.5])


# ---------------------------------------------------------------------------
# Albedo patterns (procedural in world space, so views agree)
# ---------------------------------------------------------------------------


def eval_pattern(pattern: dict, p: NDArray) -> NDArray[np.float64]:
    kind = pattern.get("type", "solid")
    n = len(p)
    if kind == "solid":
        return np.broadcast_to(np.asarray(pattern.get("color", (0.7, 0.7, 0.7)), float), (n, 3)).copy()
    if kind == "checker":
        c0 = np.asarray(pattern.get("colors", [(0.9, 0.9, 0.9), (0.2, 0.2, 0.2)])[0], float)
        c1 = np.asarray(pattern.get("colors", [(0.9, 0.9, 0.9), (0.2, 0.2, 0.2)])[1], float)
        cell = np.floor(p / float(pattern.get("scale", 0.25))).astype(np.int64).sum(-1) % 2
        return np.where(cell[:, None] == 0, c0, c1)
    if kind == "sine":
        base = np.asarray(pattern.get("base", (0.5, 0.5, 0.5)), float)
        amp = np.asarray(pattern.get("amp", (0.2, 0.2, 0.2)), float)
        freq = np.asarray(pattern.get("freq", (1.0, 0.0, 0.0)), float).reshape(-1, 3)
        phase = np.asarray(pattern.get("phase", (0.0, 2.0, 4.0)), float)
        wave = np.zeros((n, 1))
        for f in freq:
            wave = wave + np.sin(2 * np.pi * (p @ f)[:, None] + phase[None, :])
        return np.clip(base + amp * wave / len(freq), 0.0, 1.0)
    raise ValueError(f"unknown pattern type {kind!r}")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


@dataclass
class Plane:
    """Finite rectangle through ``center`` spanned by ``u_axis`` and normal."""

    center: NDArray
    normal: NDArray
    u_axis: NDArray
    half_size: tuple[float, float] = (50.0, 50.0)
    pattern: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, float)
        self.normal = np.asarray(self.normal, float) / np.linalg.norm(self.normal)
        u = np.asarray(self.u_axis, float)
        u = u - (u @ self.normal) * self.normal
        self.u_axis = u / np.linalg.norm(u)

    def intersect(self, o: NDArray, d: NDArray) -> tuple[NDArray, NDArray]:
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - o) @ self.normal) / denom
        hit = o + t[:, None] * d
        rel = hit - self.center
        v_axis = np.cross(self.normal, self.u_axis)
        ok = (
            (np.abs(denom) > 1e-12)
            & (t > 1e-9)
            & (np.abs(rel @ self.u_axis) <= self.half_size[0])
            & (np.abs(rel @ v_axis) <= self.half_size[1])
        )
        return np.where(ok, t, np.inf), np.broadcast_to(self.normal, d.shape)

    def corners(self) -> NDArray:
        v_axis = np.cross(self.normal, self.u_axis)
        hu, hv = self.half_size
        return np.array([self.center + a * hu * self.u_axis + b * hv * v_axis for a in (-1, 1) for b in (-1, 1)])


@dataclass
class Sphere:
    center: NDArray
    radius: float
    pattern: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, float)

    def intersect(self, o: NDArray, d: NDArray) -> tuple[NDArray, NDArray]:
        oc = o - self.center
        b = np.einsum("ij,ij->i", oc, d) if oc.ndim == 2 else d @ oc
        c = oc @ oc - self.radius**2 if oc.ndim == 1 else np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > 1e-9, t0, t1)
        t = np.where((disc >= 0) & (t > 1e-9), t, np.inf)
        hit = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
        normal = (hit - self.center) / self.radius
        return t, normal

    def corners(self) -> NDArray:
        return np.array([self.center - self.radius, self.center + self.radius])


@dataclass
class Box:
    """Axis-aligned box (optionally rotated about its center)."""

    center: NDArray
    half_size: NDArray
    rotation: NDArray = field(default_factory=lambda: np.eye(3))
    pattern: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, float)
        self.half_size = np.asarray(self.half_size, float)
        self.rotation = np.asarray(self.rotation, float)

    def intersect(self, o: NDArray, d: NDArray) -> tuple[NDArray, NDArray]:
        # work in the box frame: x_box = R^T (x - c)
        ob = (o - self.center) @ self.rotation
        db = d @ self.rotation
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / db
            t1 = (-self.half_size - ob) * inv
            t2 = (self.half_size - ob) * inv
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        tmin = np.where(np.isnan(tmin), -np.inf, tmin)
        tmax = np.where(np.isnan(tmax), np.inf, tmax)
        t_enter = tmin.max(axis=1)
        t_exit = tmax.min(axis=1)
        axis = tmin.argmax(axis=1)
        hit = (t_enter <= t_exit) & (t_enter > 1e-9)
        t = np.where(hit, t_enter, np.inf)
        nb = np.zeros_like(db)
        rows = np.arange(len(db))
        nb[rows, axis] = -np.sign(db[rows, axis])
        return t, nb @ self.rotation.T

    def corners(self) -> NDArray:
        signs = np.array([[a, b, c] for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)], float)
        return self.center + (signs * self.half_size) @ self.rotation.T


Primitive = Plane | Sphere | Box


def primitive_from_dict(d: dict) -> Primitive:
    kind = d.get("type")
    pattern = d.get("pattern", {})
    if kind == "plane":
        return Plane(d["center"], d["normal"], d.get("u_axis", _any_perp(d["normal"])), tuple(d.get("half_size", (50.0, 50.0))), pattern)
    if kind == "sphere":
        return Sphere(d["center"], float(d["radius"]), pattern)
    if kind == "box":
        return Box(d["center"], d["half_size"], np.asarray(d.get("rotation", np.eye(3)), float), pattern)
    raise ValueError(f"unknown primitive type {kind!r}")


def _any_perp(n) -> NDArray:
    n = np.asarray(n, float)
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    return np.cross(n, a)


# ---------------------------------------------------------------------------
# Scene specification
# ---------------------------------------------------------------------------


@dataclass
class SceneSpec:
    primitives: list[Primitive]
    trajectory: list[Camera]
    image_size: tuple[int, int]  # (width, height)
    seed: int = 0
    depth_noise: float = 0.0
    bounds: tuple[NDArray, NDArray] | None = None
    latent_dim: int = LATENT_DIM

    def __post_init__(self) -> None:
        if not self.trajectory:
            raise ValueError("scene trajectory is empty")
        if not self.primitives:
            raise ValueError("scene has no primitives")
        w, h = self.image_size
        for cam in self.trajectory:
            if (cam.width, cam.height) != (w, h):
                raise ValueError("camera size disagrees with image_size")
        if self.bounds is not None:
            lo, hi = (np.asarray(b, float) for b in self.bounds)
            for prim in self.primitives:
                c = prim.corners()
                if np.any(c < lo - 1e-9) or np.any(c > hi + 1e-9):
                    raise ValueError(f"primitive {type(prim).__name__} leaves the scene bounds")

    @classmethod
    def from_dict(cls, doc: dict) -> SceneSpec:
        w, h = (int(v) for v in doc["image_size"])
        focal = float(doc.get("focal", 0.9 * w))
        traj = doc.get("trajectory")
        if not traj:
            raise ValueError("scene trajectory is empty")
        cameras = []
        for entry in traj:
            if "eye" in entry:
                pose = look_at(entry["eye"], entry["target"], entry.get("up", (0.0, -1.0, 0.0)))
                cameras.append(Camera(focal, focal, w / 2.0, h / 2.0, pose, w, h))
            else:
                cameras.append(camera_from_dict({"width": w, "height": h, **entry}))
        bounds = doc.get("bounds")
        return cls(
            [primitive_from_dict(p) for p in doc["primitives"]],
            cameras,
            (w, h),
            int(doc.get("seed", 0)),
            float(doc.get("depth_noise", 0.0)),
            None if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float)),
            int(doc.get("latent_dim", LATENT_DIM)),
        )

    @classmethod
    def load(cls, path) -> SceneSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Rendering the oracle frames
# ---------------------------------------------------------------------------


def cast_rays(primitives: list[Primitive], origin: NDArray, dirs: NDArray):
    """Closest hit over all primitives: ``(t, normal, albedo)`` per ray."""
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_n = np.zeros((n, 3))
    best_id = np.full(n, -1)
    for i, prim in enumerate(primitives):
        t, nrm = prim.intersect(origin, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n = np.where(closer[:, None], nrm, best_n)
        best_id = np.where(closer, i, best_id)
    hit = np.isfinite(best_t)
    pts = origin + np.where(hit, best_t, 0.0)[:, None] * dirs
    albedo = np.zeros((n, 3))
    for i, prim in enumerate(primitives):
        m = best_id == i
        if m.any():
            albedo[m] = eval_pattern(prim.pattern, pts[m])
    # face the normal towards the viewer
    flip = np.einsum("ij,ij->i", best_n, dirs) > 0
    best_n = np.where(flip[:, None], -best_n, best_n)
    return best_t, best_n, albedo, hit


def _shade(albedo: NDArray, normal: NDArray) -> NDArray:
    lambert = np.abs(normal @ -_LIGHT)
    return np.clip(albedo * (0.55 + 0.45 * lambert)[:, None], 0.0, 1.0)


def _image_gradient(gray: NDArray) -> NDArray:
    gy, gx = np.gradient(gray)
    return np.hypot(gx, gy)


def _latent_mixer(c: int) -> NDArray:
    rng = np.random.default_rng(20250101)
    q, _ = np.linalg.qr(rng.standard_normal((max(c, _RAW_FEATURES), max(c, _RAW_FEATURES))))
    return q[:c, :_RAW_FEATURES]


def pixel_latents(rgb: NDArray, normal: NDArray, pos: NDArray, grad: NDArray, depth: NDArray, c: int) -> NDArray:
    """Deterministic per-pixel latent from local appearance and geometry."""
    feats = [rgb * 2.0 - 1.0, normal, pos]
    for k in range(3):
        feats += [np.sin(np.pi * 2**k * pos), np.cos(np.pi * 2**k * pos)]
    lum = rgb.mean(-1, keepdims=True)
    feats += [grad[:, None] * 4.0, np.log(np.maximum(depth, 1e-3))[:, None], np.ones_like(lum), lum * 2.0 - 1.0, (normal @ -_LIGHT)[:, None]]
    raw = np.concatenate(feats, axis=1)
    assert raw.shape[1] == _RAW_FEATURES
    return raw @ _latent_mixer(c).T


def render_frame(spec: SceneSpec, cam: Camera, frame_id: int, rng: np.random.Generator) -> tuple[PixelFrame, NDArray]:
    w, h = spec.image_size
    dirs = cam.pixel_rays().reshape(-1, 3)
    origin = cam.center
    t, normal, albedo, hit = cast_rays(spec.primitives, origin, dirs)
    noise = rng.standard_normal(len(t)) if spec.depth_noise > 0 else None
    if noise is not None:
        t = t * (1.0 + spec.depth_noise * noise)
    pts = origin + np.where(hit, t, 0.0)[:, None] * dirs
    rgb = np.where(hit[:, None], _shade(albedo, normal), 0.0)
    cam_pts = pts @ cam.R.T + cam.t
    depth = np.where(hit, cam_pts[:, 2], 0.0)

    gray = rgb.reshape(h, w, 3).mean(-1)
    grad = _image_gradient(gray).reshape(-1)
    latent = pixel_latents(rgb, normal, pts, grad, np.where(hit, depth, 1.0), spec.latent_dim)
    latent = np.where(hit[:, None], latent, 0.0)
    sal_logit = -2.0 + 10.0 * grad
    pointmap = np.where(hit[:, None], pts, np.nan)
    frame = PixelFrame(
        rgb.reshape(h, w, 3),
        pointmap.reshape(h, w, 3),
        latent.reshape(h, w, -1),
        sal_logit.reshape(h, w),
        cam,
        frame_id,
    )
    return frame, depth.reshape(h, w)


def synth_sequence(spec: SceneSpec) -> tuple[list[PixelFrame], list[NDArray]]:
    """Render every camera of the trajectory. Returns frames and z-depth maps."""
    rng = np.random.default_rng(spec.seed)
    frames, depths = [], []
    for i, cam in enumerate(spec.trajectory):
        f, d = render_frame(spec, cam, i, rng)
        frames.append(f)
        depths.append(d)
    if not any(f.valid.any() for f in frames):
        raise EmptyScene("no primitive intersects any camera ray")
    return frames, depths


# ---------------------------------------------------------------------------
# Ready-made scenes
# ---------------------------------------------------------------------------


def _room_primitives(size: float = 2.0, height: float = 1.6) -> list[Primitive]:
    """Closed room centered at the origin, y pointing down (floor at y=+height/2)."""
    s, hh = size, height / 2
    wall = lambda c, n, u, hs, pat: Plane(c, n, u, hs, pat)  # noqa: E731
    return [
        wall((0, hh, 0), (0, -1, 0), (1, 0, 0), (s, s), {"type": "sine", "base": (0.55, 0.45, 0.35), "amp": (0.15, 0.12, 0.1), "freq": [(0.8, 0, 0.5)]}),
        wall((0, -hh, 0), (0, 1, 0), (1, 0, 0), (s, s), {"type": "solid", "color": (0.85, 0.85, 0.8)}),
        wall((0, 0, s), (0, 0, -1), (1, 0, 0), (s, hh), {"type": "sine", "base": (0.4, 0.55, 0.6), "amp": (0.15, 0.1, 0.1), "freq": [(0.6, 0.5, 0)]}),
        wall((0, 0, -s), (0, 0, 1), (1, 0, 0), (s, hh), {"type": "sine", "base": (0.6, 0.5, 0.55), "amp": (0.1, 0.15, 0.1), "freq": [(0.7, 0.4, 0)]}),
        wall((s, 0, 0), (-1, 0, 0), (0, 0, 1), (s, hh), {"type": "sine", "base": (0.5, 0.6, 0.45), "amp": (0.12, 0.1, 0.15), "freq": [(0, 0.5, 0.6)]}),
        wall((-s, 0, 0), (1, 0, 0), (0, 0, 1), (s, hh), {"type": "sine", "base": (0.55, 0.5, 0.65), "amp": (0.1, 0.12, 0.1), "freq": [(0, 0.6, 0.5)]}),
    ]


def plane_scene(depth: float = 2.0, size: tuple[int, int] = (64, 64), focal: float = 60.0, n_views: int = 1, seed: int = 0) -> SceneSpec:
    """A single fronto-parallel textured plane at camera depth ``depth``."""
    w, h = size
    plane = Plane((0, 0, depth), (0, 0, -1), (1, 0, 0), (50.0, 50.0), {"type": "sine", "base": (0.5, 0.5, 0.5), "amp": (0.2, 0.15, 0.1), "freq": [(2.0, 1.0, 0.0)]})
    cams = [
        Camera(focal, focal, w / 2, h / 2, RigidTransform(np.eye(3), np.array([-0.05 * i, 0.0, 0.0])), w, h)
        for i in range(n_views)
    ]
    return SceneSpec([plane], cams, (w, h), seed)


def desk_scene(
    n_views: int = 8,
    size: tuple[int, int] = (128, 96),
    focal: float = 110.0,
    arc_degrees: float = 30.0,
    seed: int = 0,
    depth_noise: float = 0.0,
) -> SceneSpec:
    """Desk-scale scene: floor, back wall, a box and a sphere, seen along a short arc."""
    w, h = size
    prims: list[Primitive] = [
        Plane((0, 0.3, 0), (0, -1, 0), (1, 0, 0), (1.5, 1.5), {"type": "sine", "base": (0.6, 0.5, 0.4), "amp": (0.15, 0.12, 0.1), "freq": [(2.0, 0.0, 1.5)]}),
        Plane((0, -0.3, 0.9), (0, 0, -1), (1, 0, 0), (1.5, 0.6), {"type": "sine", "base": (0.45, 0.55, 0.65), "amp": (0.12, 0.12, 0.12), "freq": [(1.5, 2.0, 0.0)]}),
        Box((-0.25, 0.15, 0.35), (0.15, 0.15, 0.15), pattern={"type": "sine", "base": (0.7, 0.35, 0.3), "amp": (0.1, 0.08, 0.08), "freq": [(3.0, 2.0, 1.0)]}),
        Sphere((0.28, 0.12, 0.3), 0.18, {"type": "sine", "base": (0.35, 0.6, 0.35), "amp": (0.1, 0.12, 0.1), "freq": [(2.0, 3.0, 1.0)]}),
    ]
    cams = []
    target = np.array([0.0, 0.05, 0.4])
    for i in range(n_views):
        a = np.deg2rad(-arc_degrees / 2 + arc_degrees * i / max(n_views - 1, 1))
        eye = target + np.array([np.sin(a) * 1.0, -0.45, -np.cos(a) * 1.0])
        cams.append(Camera(focal, focal, w / 2, h / 2, look_at(eye, target), w, h))
    bounds = (np.array([-1.6, -1.0, -1.6]), np.array([1.6, 0.4, 1.6]))
    return SceneSpec(prims, cams, (w, h), seed, depth_noise, bounds)


def pan_scene(
    n_views: int = 10,
    size: tuple[int, int] = (128, 96),
    focal: float = 100.0,
    pan_degrees: float = 24.0,
    seed: int = 0,
) -> SceneSpec:
    """Camera near a room center panning slowly: heavy pairwise overlap."""
    w, h = size
    prims = _room_primitives() + [
        Box((0.8, 0.5, 1.2), (0.25, 0.3, 0.25), pattern={"type": "sine", "base": (0.7, 0.4, 0.3), "amp": (0.1, 0.1, 0.1), "freq": [(2.0, 1.0, 0.0)]}),
    ]
    cams = []
    for i in range(n_views):
        a = np.deg2rad(pan_degrees * i / max(n_views - 1, 1))
        eye = np.array([0.0, 0.0, 0.0])
        cams.append(Camera(focal, focal, w / 2, h / 2, look_at(eye, eye + [np.sin(a), 0.15, np.cos(a)]), w, h))
    return SceneSpec(prims, cams, (w, h), seed)


def loop_scene(
    n_frames: int = 50,
    period: int = 40,
    size: tuple[int, int] = (128, 96),
    focal: float = 100.0,
    seed: int = 0,
) -> SceneSpec:
    """Camera circling inside a room while looking outwards; revisits after ``period`` frames."""
    w, h = size
    prims = _room_primitives() + [
        Box((1.0, 0.45, 1.0), (0.25, 0.35, 0.25), pattern={"type": "sine", "base": (0.7, 0.4, 0.3), "amp": (0.1, 0.1, 0.1), "freq": [(2.0, 1.0, 0.0)]}),
        Sphere((-1.1, 0.5, -0.9), 0.3, {"type": "sine", "base": (0.3, 0.6, 0.4), "amp": (0.1, 0.1, 0.1), "freq": [(1.0, 2.0, 1.0)]}),
    ]
    cams = []
    for i in range(n_frames):
        a = 2 * np.pi * i / period
        eye = np.array([0.25 * np.cos(a), 0.0, 0.25 * np.sin(a)])
        look = eye + np.array([np.cos(a), 0.2, np.sin(a)])
        cams.append(Camera(focal, focal, w / 2, h / 2, look_at(eye, look), w, h))
    return SceneSpec(prims, cams, (w, h), seed)

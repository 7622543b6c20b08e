"""Geometry, camera, and Gaussian-primitive math shared by every stage.

Conventions
-----------
* Camera poses are camera-from-world: ``x_cam = R @ x_world + t``.
* Pixel ``(row, col)`` has its center at continuous image coordinates
  ``(u, v) = (col + 0.5, row + 0.5)``; the principal point of a centered
  camera is therefore ``(W / 2, H / 2)``.
* Quaternions are stored ``(w, x, y, z)``.
* Spherical-harmonic coefficients use the sign convention of the common
  3DGS exporters, so PLY files interoperate with existing viewers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import BehindCamera

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def sh_coeff_count(degree: int) -> int:
    if not 0 <= degree <= 3:
        raise ValueError(f"SH degree must be in [0, 3], got {degree}")
    return (degree + 1) ** 2


# ---------------------------------------------------------------------------
# Rigid transforms and cameras
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation acting as ``x -> R @ x + t``."""

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: NDArray) -> NDArray[np.float64]:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )


def nearest_rotation(m: NDArray) -> NDArray[np.float64]:
    """Project a 3x3 matrix onto SO(3) (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> RigidTransform:
    """Camera-from-world pose looking from ``eye`` towards ``target``.

    The camera frame is x right, y down, z forward; ``up`` is the world
    direction that should appear towards the top of the image.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])  # rows: camera axes in world frame
    return RigidTransform(R, -R @ eye)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a camera-from-world pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    pose: RigidTransform
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if not self.pose.is_valid():
            raise ValueError("camera rotation is not orthonormal")

    @classmethod
    def centered(cls, focal: float, width: int, height: int, pose: RigidTransform | None = None) -> Camera:
        return cls(focal, focal, width / 2.0, height / 2.0, pose or RigidTransform.identity(), width, height)

    @property
    def R(self) -> NDArray[np.float64]:
        return self.pose.rotation

    @property
    def t(self) -> NDArray[np.float64]:
        return self.pose.translation

    @property
    def center(self) -> NDArray[np.float64]:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    @property
    def K(self) -> NDArray[np.float64]:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_pose(self, pose: RigidTransform) -> Camera:
        return Camera(self.fx, self.fy, self.cx, self.cy, pose, self.width, self.height)

    def pixel_rays(self) -> NDArray[np.float64]:
        """World-space unit ray directions for every pixel center, shape (H, W, 3)."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        d_cam = np.stack([(uu - self.cx) / self.fx, (vv - self.cy) / self.fy, np.ones_like(uu)], axis=-1)
        d_world = d_cam @ self.R  # R^T applied to row vectors
        return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


def project_point(p_world, cam: Camera) -> tuple[float, float, float]:
    """Pinhole projection of one world point; returns ``(u, v, depth)``."""
    p = cam.R @ np.asarray(p_world, dtype=np.float64) + cam.t
    z = p[2]
    if z <= 1e-8:
        raise BehindCamera(f"point at camera depth {z:.3g} is not in front of the camera")
    return cam.fx * p[0] / z + cam.cx, cam.fy * p[1] / z + cam.cy, z


def project_points(points: NDArray, cam: Camera) -> tuple[NDArray, NDArray, NDArray]:
    """Vectorized projection. Points with depth <= 0 yield NaN pixel coords."""
    p = np.asarray(points, dtype=np.float64) @ cam.R.T + cam.t
    z = p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(z > 1e-8, z, np.nan)
        u = cam.fx * p[..., 0] / safe + cam.cx
        v = cam.fy * p[..., 1] / safe + cam.cy
    return u, v, z


def unproject(u: float, v: float, depth: float, cam: Camera) -> NDArray[np.float64]:
    """Inverse of :func:`project_point` for a known camera-frame depth."""
    x_cam = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.R.T @ (x_cam - cam.t)


def world_from_local_pointmap(pointmap_local: NDArray, pose: RigidTransform) -> NDArray[np.float64]:
    """Lift a camera-frame pointmap to world coordinates.

    ``pose`` is camera-from-world, so every point goes through its inverse.
    """
    return pose.inverse().apply(pointmap_local)


# ---------------------------------------------------------------------------
# Quaternions and covariance
# ---------------------------------------------------------------------------


def quat_normalize(q: NDArray) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=np.float64)
    # fixed summation order keeps the result independent of array layout
    n = np.sqrt(q[..., 0:1] ** 2 + q[..., 1:2] ** 2 + q[..., 2:3] ** 2 + q[..., 3:4] ** 2)
    ident = np.zeros_like(q)
    ident[..., 0] = 1.0
    # already-unit inputs pass through untouched so re-normalizing is exact
    n = np.where(np.abs(n - 1.0) <= 4e-16, 1.0, n)
    return np.where(n > 1e-12, q / np.where(n > 1e-12, n, 1.0), ident)


def quat_multiply(a: NDArray, b: NDArray) -> NDArray[np.float64]:
    """Hamilton product ``a ⊗ b`` for (..., 4) arrays."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_rotmat(q: NDArray) -> NDArray[np.float64]:
    w, x, y, z = np.moveaxis(quat_normalize(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def build_covariance(quat: NDArray, log_scale: NDArray) -> NDArray[np.float64]:
    """Covariance ``R S S^T R^T`` with ``S = diag(exp(log_scale))``.

    Works on single primitives or batches (leading dimensions broadcast).
    """
    R = quat_to_rotmat(quat)
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    cov = (R * s2[..., None, :]) @ np.swapaxes(R, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


# ---------------------------------------------------------------------------
# Spherical harmonics
# ---------------------------------------------------------------------------


def sh_basis(dirs: NDArray, degree: int) -> NDArray[np.float64]:
    """Real SH basis values for unit directions, shape (..., (degree+1)**2)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=-1)


def sh_degree_of(sh: NDArray) -> int:
    n = np.asarray(sh).shape[-2]
    degree = int(round(np.sqrt(n))) - 1
    if (degree + 1) ** 2 != n:
        raise ValueError(f"{n} SH coefficients do not form a complete band")
    return degree


def sh_eval(sh: NDArray, direction: NDArray) -> NDArray[np.float64]:
    """View-dependent color: ``max(basis(dir) · sh + 0.5, 0)``.

    ``sh`` has shape (..., (degree+1)**2, 3) and ``direction`` (..., 3).
    """
    sh = np.asarray(sh, dtype=np.float64)
    basis = sh_basis(direction, sh_degree_of(sh))
    rgb = np.einsum("...k,...kc->...c", basis, sh) + 0.5
    return np.maximum(rgb, 0.0)


def rgb_to_sh_dc(rgb: NDArray) -> NDArray[np.float64]:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


# ---------------------------------------------------------------------------
# Gaussian primitives
# ---------------------------------------------------------------------------


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p, eps: float = 1e-6):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class Gaussian3D:
    """A single splat primitive."""

    mu: NDArray[np.float64]
    quat: NDArray[np.float64]
    log_scale: NDArray[np.float64]
    opacity_logit: float
    sh: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(3))
        object.__setattr__(self, "quat", quat_normalize(np.asarray(self.quat).reshape(4)))
        object.__setattr__(self, "log_scale", np.asarray(self.log_scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, "opacity_logit", float(self.opacity_logit))
        object.__setattr__(self, "sh", np.asarray(self.sh, dtype=np.float64).reshape(-1, 3))

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> NDArray[np.float64]:
        return build_covariance(self.quat, self.log_scale)


@dataclass
class GaussianSet:
    """Structure-of-arrays batch of Gaussians.

    Attributes
    ----------
    mu : (N, 3)
    quat : (N, 4), unit norm
    log_scale : (N, 3)
    opacity_logit : (N,)
    sh : (N, (degree+1)**2, 3)
    """

    mu: NDArray
    quat: NDArray
    log_scale: NDArray
    opacity_logit: NDArray
    sh: NDArray
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.mu)
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(n, 3)
        self.quat = quat_normalize(np.asarray(self.quat).reshape(n, 4))
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(n, 3)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64)
        self.sh = sh.reshape(n, -1, 3) if n else sh.reshape(0, sh.shape[-2] if sh.ndim == 3 else 1, 3)
        sh_degree_of(self.sh)

    @classmethod
    def empty(cls, degree: int = 1) -> GaussianSet:
        return cls(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, sh_coeff_count(degree), 3))
        )

    @classmethod
    def from_list(cls, items: list[Gaussian3D], degree: int = 1) -> GaussianSet:
        if not items:
            return cls.empty(degree)
        return cls(
            np.stack([g.mu for g in items]),
            np.stack([g.quat for g in items]),
            np.stack([g.log_scale for g in items]),
            np.array([g.opacity_logit for g in items]),
            np.stack([g.sh for g in items]),
        )

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.mu[i], self.quat[i], self.log_scale[i], self.opacity_logit[i], self.sh[i])

    @property
    def sh_degree(self) -> int:
        return sh_degree_of(self.sh)

    @property
    def opacity(self) -> NDArray[np.float64]:
        return sigmoid(self.opacity_logit)

    def subset(self, index) -> GaussianSet:
        return GaussianSet(
            self.mu[index], self.quat[index], self.log_scale[index], self.opacity_logit[index], self.sh[index]
        )

    @staticmethod
    def concat(sets: list[GaussianSet]) -> GaussianSet:
        sets = [s for s in sets if len(s)]
        if not sets:
            return GaussianSet.empty()
        return GaussianSet(
            np.concatenate([s.mu for s in sets]),
            np.concatenate([s.quat for s in sets]),
            np.concatenate([s.log_scale for s in sets]),
            np.concatenate([s.opacity_logit for s in sets]),
            np.concatenate([s.sh for s in sets]),
        )

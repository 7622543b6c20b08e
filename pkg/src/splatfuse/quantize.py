"""Saliency-weighted voxel quantization and the global anchor store.

Anchors keep running sums (Σs, Σs·x, Σs·f) instead of means. Merging two
anchor sets is then plain addition, which makes frame-by-frame fusion
agree with fusing every point at once up to floating-point reassociation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .core import Camera
from .errors import EmptyVoxel, MalformedFile, MixedVoxel, NonFinite, VoxelSizeMismatch

DEFAULT_GAMMA = 0.005
REPLICA_GAMMA = 0.01
DEFAULT_MARGIN = 0.15
Z_NEAR = 0.01
Z_FAR = 100.0

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int


def voxel_key(x, gamma: float) -> tuple[VoxelKey, NDArray[np.float64]]:
    """Lattice key ``floor(x / gamma)`` and the voxel corner ``key * gamma``."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    if gamma <= 0:
        raise ValueError("voxel size must be positive")
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"non-finite point {x}")
    k = np.floor(x / gamma).astype(np.int64)
    return VoxelKey(*(int(v) for v in k)), k * gamma


def voxel_keys(points: NDArray, gamma: float) -> NDArray[np.int64]:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if gamma <= 0:
        raise ValueError("voxel size must be positive")
    if not np.all(np.isfinite(points)):
        raise NonFinite("non-finite point in input")
    return np.floor(points / gamma).astype(np.int64)


def pack_keys(keys: NDArray[np.int64]) -> NDArray[np.int64]:
    """Pack (N, 3) lattice keys into sortable int64 codes (21 bits per axis)."""
    k = np.asarray(keys, dtype=np.int64).reshape(-1, 3) + _KEY_OFFSET
    if np.any(k < 0) or np.any(k > _KEY_MASK):
        raise ValueError("voxel key outside the ±2^20 packing range")
    return (k[:, 0] << (2 * _KEY_BITS)) | (k[:, 1] << _KEY_BITS) | k[:, 2]


def unpack_keys(codes: NDArray[np.int64]) -> NDArray[np.int64]:
    c = np.asarray(codes, dtype=np.int64)
    return np.stack([(c >> (2 * _KEY_BITS)) & _KEY_MASK, (c >> _KEY_BITS) & _KEY_MASK, c & _KEY_MASK], -1) - _KEY_OFFSET


@dataclass
class Anchor:
    """One voxel's fused representative."""

    key: VoxelKey
    sum_s: float
    sum_sx: NDArray[np.float64]
    sum_sf: NDArray[np.float64]
    decoded: dict | None = None

    @property
    def mu(self) -> NDArray[np.float64]:
        return self.sum_sx / self.sum_s

    @property
    def feature(self) -> NDArray[np.float64]:
        return self.sum_sf / self.sum_s


def fuse_points(points, gamma: float) -> Anchor:
    """Fuse ``(x, s, f)`` triples that share one voxel into an anchor."""
    points = list(points)
    if not points:
        raise EmptyVoxel("no points to fuse")
    key0 = voxel_key(points[0][0], gamma)[0]
    sum_s = 0.0
    sum_sx = np.zeros(3)
    sum_sf = np.zeros(len(np.atleast_1d(points[0][2])))
    for x, s, f in points:
        if voxel_key(x, gamma)[0] != key0:
            raise MixedVoxel(f"point {x} is outside voxel {key0}")
        if not s > 0:
            raise ValueError("saliency must be positive")
        sum_s += s
        sum_sx += s * np.asarray(x, dtype=np.float64)
        sum_sf += s * np.asarray(f, dtype=np.float64)
    return Anchor(key0, sum_s, sum_sx, sum_sf)


@dataclass
class AnchorSet:
    """Anchors as parallel arrays, kept sorted by packed voxel key.

    ``decoded`` optionally carries per-anchor attribute arrays written by the
    refiner; rows that were never decoded hold NaN.
    """

    gamma: float
    codes: NDArray[np.int64]
    sum_s: NDArray[np.float64]
    sum_sx: NDArray[np.float64]
    sum_sf: NDArray[np.float64]
    decoded: dict[str, NDArray] | None = None

    @classmethod
    def empty(cls, gamma: float, latent_dim: int) -> AnchorSet:
        return cls(gamma, np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 3)), np.zeros((0, latent_dim)))

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def latent_dim(self) -> int:
        return self.sum_sf.shape[1]

    @property
    def keys(self) -> NDArray[np.int64]:
        return unpack_keys(self.codes)

    @property
    def mu(self) -> NDArray[np.float64]:
        return self.sum_sx / self.sum_s[:, None]

    @property
    def features(self) -> NDArray[np.float64]:
        return self.sum_sf / self.sum_s[:, None]

    def __getitem__(self, i: int) -> Anchor:
        dec = None if self.decoded is None else {k: v[i] for k, v in self.decoded.items()}
        return Anchor(VoxelKey(*map(int, self.keys[i])), float(self.sum_s[i]), self.sum_sx[i], self.sum_sf[i], dec)

    def subset(self, index) -> AnchorSet:
        dec = None if self.decoded is None else {k: v[index] for k, v in self.decoded.items()}
        return AnchorSet(self.gamma, self.codes[index], self.sum_s[index], self.sum_sx[index], self.sum_sf[index], dec)

    def copy(self) -> AnchorSet:
        return self.subset(slice(None))

    def scaled(self, factor: float) -> AnchorSet:
        return AnchorSet(
            self.gamma, self.codes.copy(), self.sum_s * factor, self.sum_sx * factor, self.sum_sf * factor, self.decoded
        )


def _reduce_sorted(codes, s, sx, sf, decoded=None):
    """Sum rows sharing a code. Input must be sorted by code."""
    if len(codes) == 0:
        return codes, s, sx, sf, decoded
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    out_dec = None
    if decoded is not None:
        # last writer wins for the decoded side-slot
        ends = np.r_[starts[1:], len(codes)] - 1
        out_dec = {}
        for k, v in decoded.items():
            take = np.where(np.isnan(v[ends]).reshape(len(ends), -1).all(-1), starts, ends)
            out_dec[k] = v[take]
    return (
        codes[starts],
        np.add.reduceat(s, starts),
        np.add.reduceat(sx, starts, axis=0),
        np.add.reduceat(sf, starts, axis=0),
        out_dec,
    )


def quantize_frame(points: NDArray, saliency: NDArray, latent: NDArray, gamma: float) -> AnchorSet:
    """Group points by voxel and fuse each group with saliency weights.

    Parameters
    ----------
    points : (N, 3) world positions
    saliency : (N,) positive fusion weights
    latent : (N, C) per-point latents
    gamma : voxel size
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    saliency = np.asarray(saliency, dtype=np.float64).reshape(-1)
    latent = np.asarray(latent, dtype=np.float64).reshape(len(points), -1)
    codes = pack_keys(voxel_keys(points, gamma))
    order = np.argsort(codes, kind="stable")
    c, s, sx, sf, _ = _reduce_sorted(
        codes[order], saliency[order], saliency[order, None] * points[order], saliency[order, None] * latent[order]
    )
    return AnchorSet(gamma, c, s, sx, sf)


def _concat_decoded(parts: list[AnchorSet]) -> dict[str, NDArray] | None:
    if all(p.decoded is None for p in parts):
        return None
    template = next(p.decoded for p in parts if p.decoded is not None)
    out = {}
    for k, v in template.items():
        chunks = []
        for p in parts:
            if p.decoded is not None:
                chunks.append(p.decoded[k])
            else:
                chunks.append(np.full((len(p),) + v.shape[1:], np.nan))
        out[k] = np.concatenate(chunks)
    return out


def merge_sets(a: AnchorSet, b: AnchorSet) -> AnchorSet:
    """Union of two anchor sets; matching keys add their running sums."""
    if not np.isclose(a.gamma, b.gamma, rtol=0, atol=1e-15):
        raise VoxelSizeMismatch(f"voxel sizes differ: {a.gamma} vs {b.gamma}")
    codes = np.concatenate([a.codes, b.codes])
    order = np.argsort(codes, kind="stable")
    dec = _concat_decoded([a, b])
    if dec is not None:
        dec = {k: v[order] for k, v in dec.items()}
    c, s, sx, sf, dec = _reduce_sorted(
        codes[order],
        np.concatenate([a.sum_s, b.sum_s])[order],
        np.concatenate([a.sum_sx, b.sum_sx])[order],
        np.concatenate([a.sum_sf, b.sum_sf])[order],
        dec,
    )
    return AnchorSet(a.gamma, c, s, sx, sf, dec)


@dataclass
class AnchorStore:
    """Global voxel-key → anchor map with running fusion sums."""

    gamma: float
    latent_dim: int = 32
    anchors: AnchorSet = field(default=None)  # type: ignore[assignment]
    points_absorbed: int = 0

    def __post_init__(self) -> None:
        if self.anchors is None:
            self.anchors = AnchorSet.empty(self.gamma, self.latent_dim)

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def anchors_alive(self) -> int:
        return len(self.anchors)

    def key_set(self) -> set[int]:
        return set(self.anchors.codes.tolist())

    def take(self, mask: NDArray[np.bool_]) -> AnchorSet:
        """Remove and return the anchors selected by ``mask``."""
        out = self.anchors.subset(mask)
        self.anchors = self.anchors.subset(~mask)
        return out

    def save(self, path) -> None:
        write_store(self, path)

    @classmethod
    def load(cls, path) -> AnchorStore:
        return read_store(path)


def merge_incremental(store: AnchorStore, new_anchors: AnchorSet, points: int = 0) -> AnchorStore:
    """Fold ``new_anchors`` into ``store`` in place and return it."""
    if not np.isclose(store.gamma, new_anchors.gamma, rtol=0, atol=1e-15):
        raise VoxelSizeMismatch(f"store voxel size {store.gamma} != anchors {new_anchors.gamma}")
    store.anchors = merge_sets(store.anchors, new_anchors)
    store.points_absorbed += points
    return store


def frustum_mask(
    anchors: AnchorSet, cam: Camera, margin: float = DEFAULT_MARGIN, z_near: float = Z_NEAR, z_far: float = Z_FAR
) -> NDArray[np.bool_]:
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if len(anchors) == 0:
        return np.zeros(0, bool)
    p = anchors.mu @ cam.R.T + cam.t
    z = p[:, 2]
    in_depth = (z > z_near) & (z < z_far)
    if np.isinf(margin):
        return in_depth
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p[:, 0] / z + cam.cx
        v = cam.fy * p[:, 1] / z + cam.cy
    mu_, mv = margin * cam.width, margin * cam.height
    inside = (u >= -mu_) & (u <= cam.width + mu_) & (v >= -mv) & (v <= cam.height + mv)
    return in_depth & inside


def frustum_extract(
    store: AnchorStore, cam: Camera, margin: float = DEFAULT_MARGIN, z_near: float = Z_NEAR, z_far: float = Z_FAR
) -> AnchorSet:
    """Pull anchors near the camera frustum out of the store.

    The image rectangle is grown by ``margin`` times its size on each side.
    The returned anchors no longer live in ``store``; merging them back
    restores it exactly.
    """
    return store.take(frustum_mask(store.anchors, cam, margin, z_near, z_far))


# ---------------------------------------------------------------------------
# Snapshot file
# ---------------------------------------------------------------------------

_STORE_MAGIC = b"SLNA"
_STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<4sIdQQI")


def write_store(store: AnchorStore, path) -> None:
    a = store.anchors
    header = _STORE_HEADER.pack(_STORE_MAGIC, _STORE_VERSION, store.gamma, len(a), store.points_absorbed, a.latent_dim)
    rec = np.dtype([("key", "<i8", (3,)), ("sum_s", "<f8"), ("sum_sx", "<f8", (3,)), ("sum_sf", "<f8", (a.latent_dim,))])
    body = np.empty(len(a), dtype=rec)
    body["key"] = a.keys
    body["sum_s"] = a.sum_s
    body["sum_sx"] = a.sum_sx
    body["sum_sf"] = a.sum_sf
    Path(path).write_bytes(header + body.tobytes())


def read_store(path) -> AnchorStore:
    data = Path(path).read_bytes()
    if len(data) < _STORE_HEADER.size:
        raise MalformedFile("truncated anchor store header")
    magic, version, gamma, count, absorbed, c = _STORE_HEADER.unpack_from(data)
    if magic != _STORE_MAGIC:
        raise MalformedFile(f"bad magic {magic!r}")
    if version != _STORE_VERSION:
        raise MalformedFile(f"unsupported store version {version}")
    rec = np.dtype([("key", "<i8", (3,)), ("sum_s", "<f8"), ("sum_sx", "<f8", (3,)), ("sum_sf", "<f8", (c,))])
    if len(data) != _STORE_HEADER.size + count * rec.itemsize:
        raise MalformedFile("anchor store payload size does not match header")
    body = np.frombuffer(data, dtype=rec, offset=_STORE_HEADER.size)
    codes = pack_keys(body["key"])
    order = np.argsort(codes, kind="stable")
    anchors = AnchorSet(
        gamma,
        codes[order],
        body["sum_s"][order].copy(),
        body["sum_sx"][order].copy(),
        body["sum_sf"][order].copy(),
    )
    return AnchorStore(gamma, c, anchors, absorbed)

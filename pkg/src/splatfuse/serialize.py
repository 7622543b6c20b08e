"""Space-filling-curve serialization, patch partitioning and grid pooling.

Codes are computed with vectorized uint64 bit manipulation, so every
function here accepts either Python ints or integer numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .errors import GridOverflow, OutOfRange

DEFAULT_BITS = 16
MAX_BITS = 21  # 3 * 21 = 63 bits fits a uint64


class Curve(str, Enum):
    MORTON = "morton"
    HILBERT = "hilbert"


def _check_coords(coords: list[NDArray], bits: int) -> None:
    if not 1 <= bits <= MAX_BITS:
        raise OutOfRange(f"bits must be in [1, {MAX_BITS}], got {bits}")
    limit = 1 << bits
    for c in coords:
        if np.any(c < 0) or np.any(c >= limit):
            raise OutOfRange(f"coordinate outside [0, 2^{bits})")


def _as_u64(x) -> NDArray[np.uint64]:
    return np.asarray(x, dtype=np.int64).astype(np.uint64)


def _unwrap(x, scalar: bool):
    return int(x) if scalar else x


# ---------------------------------------------------------------------------
# Morton (z-order)
# ---------------------------------------------------------------------------


def _part1by2(n: NDArray[np.uint64]) -> NDArray[np.uint64]:
    n = n & np.uint64(0x1FFFFF)
    n = (n | (n << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    n = (n | (n << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    n = (n | (n << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    n = (n | (n << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    n = (n | (n << np.uint64(2))) & np.uint64(0x1249249249249249)
    return n


def _compact1by2(n: NDArray[np.uint64]) -> NDArray[np.uint64]:
    n = n & np.uint64(0x1249249249249249)
    n = (n ^ (n >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    n = (n ^ (n >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    n = (n ^ (n >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    n = (n ^ (n >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    n = (n ^ (n >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return n


def morton_encode(ix, iy, iz, bits: int = DEFAULT_BITS):
    """Interleave bits with x least significant: x_k -> bit 3k, y_k -> 3k+1, z_k -> 3k+2."""
    scalar = np.ndim(ix) == 0
    x, y, z = _as_u64(ix), _as_u64(iy), _as_u64(iz)
    _check_coords([np.asarray(ix), np.asarray(iy), np.asarray(iz)], bits)
    code = _part1by2(x) | (_part1by2(y) << np.uint64(1)) | (_part1by2(z) << np.uint64(2))
    return _unwrap(code, scalar)


def morton_decode(code, bits: int = DEFAULT_BITS):
    scalar = np.ndim(code) == 0
    c = np.asarray(code, dtype=np.uint64)
    if np.any(c >= np.uint64(1) << np.uint64(3 * bits)):
        raise OutOfRange(f"code exceeds {3 * bits} bits")
    x = _compact1by2(c)
    y = _compact1by2(c >> np.uint64(1))
    z = _compact1by2(c >> np.uint64(2))
    return tuple(_unwrap(a.astype(np.int64), scalar) for a in (x, y, z))


# ---------------------------------------------------------------------------
# Hilbert (Skilling's transpose formulation)
# ---------------------------------------------------------------------------


def _axes_to_transpose(X: list[NDArray[np.uint64]], bits: int) -> list[NDArray[np.uint64]]:
    n = len(X)
    X = [x.copy() for x in X]
    M = np.uint64(1) << np.uint64(bits - 1)
    Q = M
    while Q > 1:
        P = Q - np.uint64(1)
        for i in range(n):
            hit = (X[i] & Q) != 0
            t = (X[0] ^ X[i]) & P
            X[0] = np.where(hit, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = np.where(hit, X[i], X[i] ^ t)
        Q >>= np.uint64(1)
    for i in range(1, n):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    Q = M
    while Q > 1:
        t = np.where((X[n - 1] & Q) != 0, t ^ (Q - np.uint64(1)), t)
        Q >>= np.uint64(1)
    return [x ^ t for x in X]


def _transpose_to_axes(X: list[NDArray[np.uint64]], bits: int) -> list[NDArray[np.uint64]]:
    n = len(X)
    X = [x.copy() for x in X]
    N = np.uint64(2) << np.uint64(bits - 1)
    t = X[n - 1] >> np.uint64(1)
    for i in range(n - 1, 0, -1):
        X[i] = X[i] ^ X[i - 1]
    X[0] = X[0] ^ t
    Q = np.uint64(2)
    while Q != N:
        P = Q - np.uint64(1)
        for i in range(n - 1, -1, -1):
            hit = (X[i] & Q) != 0
            t = (X[0] ^ X[i]) & P
            X[0] = np.where(hit, X[0] ^ P, X[0] ^ t)
            if i:
                X[i] = np.where(hit, X[i], X[i] ^ t)
        Q <<= np.uint64(1)
    return X


def hilbert_encode(ix, iy, iz, bits: int = DEFAULT_BITS):
    """3-D Hilbert index; consecutive indices are face-adjacent cells."""
    scalar = np.ndim(ix) == 0
    _check_coords([np.asarray(ix), np.asarray(iy), np.asarray(iz)], bits)
    X = _axes_to_transpose([np.atleast_1d(_as_u64(a)) for a in (ix, iy, iz)], bits)
    code = np.zeros_like(X[0])
    for b in range(bits - 1, -1, -1):
        for i in range(3):
            code = (code << np.uint64(1)) | ((X[i] >> np.uint64(b)) & np.uint64(1))
    return _unwrap(code[0] if scalar else code, scalar)


def hilbert_decode(code, bits: int = DEFAULT_BITS):
    scalar = np.ndim(code) == 0
    c = np.atleast_1d(np.asarray(code, dtype=np.uint64))
    if np.any(c >= np.uint64(1) << np.uint64(3 * bits)):
        raise OutOfRange(f"code exceeds {3 * bits} bits")
    X = [np.zeros_like(c) for _ in range(3)]
    shift = 3 * bits - 1
    for b in range(bits - 1, -1, -1):
        for i in range(3):
            X[i] = X[i] | (((c >> np.uint64(shift)) & np.uint64(1)) << np.uint64(b))
            shift -= 1
    X = _transpose_to_axes(X, bits)
    out = tuple(x.astype(np.int64) for x in X)
    return tuple(int(a[0]) for a in out) if scalar else out


def encode(curve: Curve | str, ix, iy, iz, bits: int = DEFAULT_BITS):
    curve = Curve(curve)
    fn = morton_encode if curve is Curve.MORTON else hilbert_encode
    return fn(ix, iy, iz, bits)


# ---------------------------------------------------------------------------
# Serialization and patches
# ---------------------------------------------------------------------------


@dataclass
class SerializedBatch:
    """Anchors sorted along a curve.

    ``permutation[j]`` is the original index of the j-th anchor in curve
    order; ``codes`` are the sorted curve codes.
    """

    permutation: NDArray[np.int64]
    codes: NDArray[np.uint64]
    patch_offsets: NDArray[np.int64] | None = None

    def __len__(self) -> int:
        return len(self.permutation)

    @property
    def inverse(self) -> NDArray[np.int64]:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(len(self.permutation))
        return inv


def lattice_coords(positions: NDArray, grid: float, bits: int = DEFAULT_BITS) -> NDArray[np.int64]:
    """Floor positions onto a lattice shifted so the minimum coordinate is 0."""
    if grid <= 0:
        raise ValueError("serialization grid must be positive")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pos)):
        raise ValueError("non-finite anchor position")
    ijk = np.floor(pos / grid).astype(np.int64)
    if len(ijk):
        ijk -= ijk.min(axis=0)
        if ijk.max() >= (1 << bits):
            raise GridOverflow(f"lattice extent {ijk.max() + 1} exceeds 2^{bits}")
    return ijk


def serialize_order(
    positions: NDArray,
    grid: float,
    curve: Curve | str = Curve.HILBERT,
    bits: int = DEFAULT_BITS,
    axis_order: tuple[int, int, int] = (0, 1, 2),
    tie_break: str = "index",
) -> SerializedBatch:
    """Sort anchors by the curve code of their lattice cell.

    Ties within a cell keep the original relative order (``tie_break="index"``)
    or are ordered by position then index (``"position"``), which makes the
    ordering independent of how the input was permuted.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    ijk = lattice_coords(pos, grid, bits)[:, list(axis_order)]
    codes = np.asarray(encode(curve, ijk[:, 0], ijk[:, 1], ijk[:, 2], bits), dtype=np.uint64).reshape(-1)
    index = np.arange(len(pos))
    if tie_break == "index":
        perm = np.argsort(codes, kind="stable")
    elif tie_break == "position":
        perm = np.lexsort((index, pos[:, 2], pos[:, 1], pos[:, 0], codes))
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")
    return SerializedBatch(perm.astype(np.int64), codes[perm])


def patch_partition(batch: SerializedBatch | int, patch_size: int = 32) -> list[NDArray[np.int64]]:
    """Split the serialized order into contiguous, disjoint patches.

    Each returned array holds original anchor indices.
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    perm = np.arange(batch) if isinstance(batch, int) else batch.permutation
    return [perm[i : i + patch_size] for i in range(0, len(perm), patch_size)]


# ---------------------------------------------------------------------------
# Grid pooling
# ---------------------------------------------------------------------------


@dataclass
class PoolResult:
    positions: NDArray[np.float64]  # (P, 3) mean position of the members
    parent: NDArray[np.int64]  # (N,) coarse index of every fine element
    counts: NDArray[np.int64]  # (P,)
    keys: NDArray[np.int64]  # (P, 3) coarse voxel keys, lexicographically sorted

    def __len__(self) -> int:
        return len(self.positions)


def grid_pool_index(positions: NDArray, pool_grid: float) -> PoolResult:
    """Group points by coarse voxel key. Coarse cells come out in sorted key order."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    keys = np.floor(pos / pool_grid).astype(np.int64)
    uniq, parent = np.unique(keys, axis=0, return_inverse=True)
    parent = parent.reshape(-1)
    counts = np.bincount(parent, minlength=len(uniq))
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, parent, pos)
    return PoolResult(sums / counts[:, None], parent, counts, uniq)


def grid_pool(positions: NDArray, features: NDArray, pool_grid: float) -> tuple[NDArray, NDArray, PoolResult]:
    """Mean-reduce features into coarse cells.

    Returns ``(pooled_positions, pooled_features, pool)``; ``pool.parent`` is
    the parent map consumed by :func:`grid_unpool`.
    """
    pool = grid_pool_index(positions, pool_grid)
    feats = np.asarray(features, dtype=np.float64)
    sums = np.zeros((len(pool),) + feats.shape[1:])
    np.add.at(sums, pool.parent, feats)
    return pool.positions, sums / pool.counts.reshape((-1,) + (1,) * (feats.ndim - 1)), pool


def grid_unpool(pooled_features: NDArray, parent: NDArray) -> NDArray:
    """Broadcast coarse features back to every fine element."""
    return np.asarray(pooled_features)[np.asarray(parent)]

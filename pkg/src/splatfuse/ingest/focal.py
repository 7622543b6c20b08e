"""Focal length from a camera-frame pointmap (Weiszfeld / IRLS)."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from ..errors import DegenerateFrame


def estimate_focal_weiszfeld(
    pointmap_local: NDArray,
    max_iter: int = 10,
    rel_tol: float = 1e-6,
    min_points: int = 10,
) -> float:
    """Robust focal estimate assuming a centered principal point.

    Minimizes ``Σ_i ||p_i - f q_i||`` over the valid pixels, where ``p_i`` is
    the pixel offset from the image center and ``q_i = (x/z, y/z)``, by
    Weiszfeld's reweighted fixed point started from the least-squares
    solution.
    """
    pts = np.asarray(pointmap_local, dtype=np.float64)
    h, w = pts.shape[:2]
    u = np.arange(w) + 0.5 - w / 2.0
    v = np.arange(h) + 0.5 - h / 2.0
    uu, vv = np.meshgrid(u, v)
    z = pts[..., 2]
    valid = np.isfinite(pts).all(-1) & (z > 1e-6)
    if valid.sum() < min_points:
        raise DegenerateFrame(f"only {int(valid.sum())} points in front of the camera")
    p = np.stack([uu[valid], vv[valid]], -1)
    q = pts[valid][:, :2] / z[valid, None]
    if np.linalg.matrix_rank(p - p.mean(0), tol=1e-9) < 2 or np.einsum("ij,ij->", q, q) < 1e-18:
        raise DegenerateFrame("pixel directions are collinear")

    pq = np.einsum("ij,ij->i", p, q)
    qq = np.einsum("ij,ij->i", q, q)
    f = pq.sum() / qq.sum()
    for _ in range(max_iter):
        resid = np.linalg.norm(p - f * q, axis=1)
        wgt = 1.0 / np.maximum(resid, 1e-8)
        f_new = (wgt * pq).sum() / (wgt * qq).sum()
        done = abs(f_new - f) <= rel_tol * abs(f)
        f = f_new
        if done:
            break
    if not np.isfinite(f) or f <= 0:
        raise DegenerateFrame(f"focal estimate {f} is not positive")
    return float(f)

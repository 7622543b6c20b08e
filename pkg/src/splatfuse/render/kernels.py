"""Numba kernels: EWA projection, tile binning, alpha blending, and their adjoints.

All kernels are dtype-generic (float32 or float64 inputs) and run serially,
so gradient accumulation order is fixed and results are reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..core import SH_C0, SH_C1, SH_C2, SH_C3

ALPHA_MAX = 0.99
T_MIN = 1e-4
POWER_CUTOFF = -4.5  # Mahalanobis distance 3
BLUR = 0.3

_C2_0, _C2_1, _C2_2, _C2_3, _C2_4 = SH_C2
_C3_0, _C3_1, _C3_2, _C3_3, _C3_4, _C3_5, _C3_6 = SH_C3


@njit(cache=True)
def sh_basis_grad(x, y, z, n_coeff, b, bx, by, bz):
    """Fill basis values and their partials w.r.t. the direction components."""
    for k in range(n_coeff):
        b[k] = 0.0
        bx[k] = 0.0
        by[k] = 0.0
        bz[k] = 0.0
    b[0] = SH_C0
    if n_coeff > 1:
        b[1] = -SH_C1 * y
        by[1] = -SH_C1
        b[2] = SH_C1 * z
        bz[2] = SH_C1
        b[3] = -SH_C1 * x
        bx[3] = -SH_C1
    if n_coeff > 4:
        xx, yy, zz = x * x, y * y, z * z
        b[4] = _C2_0 * x * y
        bx[4] = _C2_0 * y
        by[4] = _C2_0 * x
        b[5] = _C2_1 * y * z
        by[5] = _C2_1 * z
        bz[5] = _C2_1 * y
        b[6] = _C2_2 * (2 * zz - xx - yy)
        bx[6] = -2 * _C2_2 * x
        by[6] = -2 * _C2_2 * y
        bz[6] = 4 * _C2_2 * z
        b[7] = _C2_3 * x * z
        bx[7] = _C2_3 * z
        bz[7] = _C2_3 * x
        b[8] = _C2_4 * (xx - yy)
        bx[8] = 2 * _C2_4 * x
        by[8] = -2 * _C2_4 * y
        if n_coeff > 9:
            b[9] = _C3_0 * y * (3 * xx - yy)
            bx[9] = _C3_0 * 6 * x * y
            by[9] = _C3_0 * (3 * xx - 3 * yy)
            b[10] = _C3_1 * x * y * z
            bx[10] = _C3_1 * y * z
            by[10] = _C3_1 * x * z
            bz[10] = _C3_1 * x * y
            b[11] = _C3_2 * y * (4 * zz - xx - yy)
            bx[11] = _C3_2 * (-2 * x * y)
            by[11] = _C3_2 * (4 * zz - xx - 3 * yy)
            bz[11] = _C3_2 * 8 * y * z
            b[12] = _C3_3 * z * (2 * zz - 3 * xx - 3 * yy)
            bx[12] = _C3_3 * (-6 * x * z)
            by[12] = _C3_3 * (-6 * y * z)
            bz[12] = _C3_3 * (6 * zz - 3 * xx - 3 * yy)
            b[13] = _C3_4 * x * (4 * zz - xx - yy)
            bx[13] = _C3_4 * (4 * zz - 3 * xx - yy)
            by[13] = _C3_4 * (-2 * x * y)
            bz[13] = _C3_4 * 8 * x * z
            b[14] = _C3_5 * z * (xx - yy)
            bx[14] = _C3_5 * 2 * x * z
            by[14] = _C3_5 * (-2 * y * z)
            bz[14] = _C3_5 * (xx - yy)
            b[15] = _C3_6 * x * (xx - 3 * yy)
            bx[15] = _C3_6 * (3 * xx - 3 * yy)
            by[15] = _C3_6 * (-6 * x * y)


@njit(cache=True)
def _quat_rot(qw, qx, qy, qz, R):
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if n < 1e-12:
        qw, qx, qy, qz, n = 1.0, 0.0, 0.0, 0.0, 1.0
    w, x, y, z = qw / n, qx / n, qy / n, qz / n
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return w, x, y, z, n


@njit(cache=True)
def project_forward(mu, quat, log_scale, sh, Rc, tc, campos, fx, fy, cx, cy, z_near, blur,
                    means2d, conics, depths, radii, colors, cov3d):
    """Per-Gaussian projection. ``radii`` is 0 for culled splats."""
    n = mu.shape[0]
    n_coeff = sh.shape[1]
    Rq = np.empty((3, 3))
    M = np.empty((3, 3))
    T = np.empty((2, 3))
    b = np.empty(16)
    bx = np.empty(16)
    by = np.empty(16)
    bz = np.empty(16)
    for i in range(n):
        tx = Rc[0, 0] * mu[i, 0] + Rc[0, 1] * mu[i, 1] + Rc[0, 2] * mu[i, 2] + tc[0]
        ty = Rc[1, 0] * mu[i, 0] + Rc[1, 1] * mu[i, 1] + Rc[1, 2] * mu[i, 2] + tc[1]
        tz = Rc[2, 0] * mu[i, 0] + Rc[2, 1] * mu[i, 1] + Rc[2, 2] * mu[i, 2] + tc[2]
        depths[i] = tz
        radii[i] = 0.0
        if tz <= z_near:
            continue
        _quat_rot(quat[i, 0], quat[i, 1], quat[i, 2], quat[i, 3], Rq)
        for r in range(3):
            for c in range(3):
                M[r, c] = Rq[r, c] * math.exp(log_scale[i, c])
        for r in range(3):
            for c in range(3):
                cov3d[i, r, c] = M[r, 0] * M[c, 0] + M[r, 1] * M[c, 1] + M[r, 2] * M[c, 2]
        iz = 1.0 / tz
        j00 = fx * iz
        j02 = -fx * tx * iz * iz
        j11 = fy * iz
        j12 = -fy * ty * iz * iz
        for c in range(3):
            T[0, c] = j00 * Rc[0, c] + j02 * Rc[2, c]
            T[1, c] = j11 * Rc[1, c] + j12 * Rc[2, c]
        a = 0.0
        bb = 0.0
        cc = 0.0
        for r in range(3):
            for c in range(3):
                s = cov3d[i, r, c]
                a += T[0, r] * s * T[0, c]
                bb += T[0, r] * s * T[1, c]
                cc += T[1, r] * s * T[1, c]
        a += blur
        cc += blur
        det = a * cc - bb * bb
        if det <= 0.0:
            continue
        conics[i, 0] = cc / det
        conics[i, 1] = -bb / det
        conics[i, 2] = a / det
        means2d[i, 0] = fx * tx * iz + cx
        means2d[i, 1] = fy * ty * iz + cy
        mid = 0.5 * (a + cc)
        lam = mid + math.sqrt(max(mid * mid - det, 0.0))
        radii[i] = 3.0 * math.sqrt(lam) * 1.001 + 1.0

        dx = mu[i, 0] - campos[0]
        dy = mu[i, 1] - campos[1]
        dz = mu[i, 2] - campos[2]
        dn = math.sqrt(dx * dx + dy * dy + dz * dz)
        dn = max(dn, 1e-12)
        sh_basis_grad(dx / dn, dy / dn, dz / dn, n_coeff, b, bx, by, bz)
        for ch in range(3):
            v = 0.5
            for k in range(n_coeff):
                v += b[k] * sh[i, k, ch]
            colors[i, ch] = max(v, 0.0)


@njit(cache=True)
def bin_tiles(means2d, radii, order, width, height, tile):
    """Per-tile Gaussian lists in global depth order (CSR layout)."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles + 1, np.int64)
    for g in order:
        r = radii[g]
        if r <= 0.0:
            continue
        x0 = max(0, int(math.floor((means2d[g, 0] - r - 0.5) / tile)))
        x1 = min(tiles_x - 1, int(math.floor((means2d[g, 0] + r - 0.5) / tile)))
        y0 = max(0, int(math.floor((means2d[g, 1] - r - 0.5) / tile)))
        y1 = min(tiles_y - 1, int(math.floor((means2d[g, 1] + r - 0.5) / tile)))
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                counts[ty * tiles_x + tx + 1] += 1
    offsets = np.cumsum(counts)
    fill = offsets[:-1].copy()
    ids = np.empty(offsets[-1], np.int64)
    for g in order:
        r = radii[g]
        if r <= 0.0:
            continue
        x0 = max(0, int(math.floor((means2d[g, 0] - r - 0.5) / tile)))
        x1 = min(tiles_x - 1, int(math.floor((means2d[g, 0] + r - 0.5) / tile)))
        y0 = max(0, int(math.floor((means2d[g, 1] - r - 0.5) / tile)))
        y1 = min(tiles_y - 1, int(math.floor((means2d[g, 1] + r - 0.5) / tile)))
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                t = ty * tiles_x + tx
                ids[fill[t]] = g
                fill[t] += 1
    return offsets, ids


@njit(cache=True)
def blend_forward(means2d, conics, colors, opacity, depths, offsets, ids, width, height, tile,
                  out_rgb, out_depth, out_alpha, final_T, n_contrib):
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            start, end = offsets[t], offsets[t + 1]
            for py in range(ty * tile, min(height, (ty + 1) * tile)):
                for px in range(tx * tile, min(width, (tx + 1) * tile)):
                    fx = px + 0.5
                    fy = py + 0.5
                    T = 1.0
                    r = 0.0
                    g_ = 0.0
                    b_ = 0.0
                    d = 0.0
                    last = 0
                    for k in range(start, end):
                        gi = ids[k]
                        dx = fx - means2d[gi, 0]
                        dy = fy - means2d[gi, 1]
                        power = -0.5 * (conics[gi, 0] * dx * dx + conics[gi, 2] * dy * dy) - conics[gi, 1] * dx * dy
                        if power < POWER_CUTOFF or power > 0.0:
                            continue
                        alpha = min(ALPHA_MAX, opacity[gi] * math.exp(power))
                        w = alpha * T
                        r += w * colors[gi, 0]
                        g_ += w * colors[gi, 1]
                        b_ += w * colors[gi, 2]
                        d += w * depths[gi]
                        T = T * (1.0 - alpha)
                        last = k - start + 1
                        if T < T_MIN:
                            break
                    out_rgb[py, px, 0] = r
                    out_rgb[py, px, 1] = g_
                    out_rgb[py, px, 2] = b_
                    out_depth[py, px] = d
                    out_alpha[py, px] = 1.0 - T
                    final_T[py, px] = T
                    n_contrib[py, px] = last


@njit(cache=True)
def blend_backward(means2d, conics, colors, opacity, depths, offsets, ids, width, height, tile,
                   final_T, n_contrib, g_rgb, g_depth, g_alpha,
                   d_means2d, d_conics, d_colors, d_opacity, d_depths):
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            start = offsets[t]
            for py in range(ty * tile, min(height, (ty + 1) * tile)):
                for px in range(tx * tile, min(width, (tx + 1) * tile)):
                    fx = px + 0.5
                    fy = py + 0.5
                    T = final_T[py, px]
                    gr = g_rgb[py, px, 0]
                    gg = g_rgb[py, px, 1]
                    gb = g_rgb[py, px, 2]
                    gd = g_depth[py, px]
                    ga = g_alpha[py, px]
                    acc_r = 0.0
                    acc_g = 0.0
                    acc_b = 0.0
                    acc_d = 0.0
                    acc_a = 0.0
                    for k in range(start + n_contrib[py, px] - 1, start - 1, -1):
                        gi = ids[k]
                        dx = fx - means2d[gi, 0]
                        dy = fy - means2d[gi, 1]
                        power = -0.5 * (conics[gi, 0] * dx * dx + conics[gi, 2] * dy * dy) - conics[gi, 1] * dx * dy
                        if power < POWER_CUTOFF or power > 0.0:
                            continue
                        G = math.exp(power)
                        raw = opacity[gi] * G
                        alpha = min(ALPHA_MAX, raw)
                        T = T / (1.0 - alpha)
                        w = alpha * T
                        d_colors[gi, 0] += w * gr
                        d_colors[gi, 1] += w * gg
                        d_colors[gi, 2] += w * gb
                        d_depths[gi] += w * gd
                        cr, cg, cb, cd = colors[gi, 0], colors[gi, 1], colors[gi, 2], depths[gi]
                        d_alpha = T * (
                            (cr - acc_r) * gr + (cg - acc_g) * gg + (cb - acc_b) * gb + (cd - acc_d) * gd + (1.0 - acc_a) * ga
                        )
                        acc_r = alpha * cr + (1.0 - alpha) * acc_r
                        acc_g = alpha * cg + (1.0 - alpha) * acc_g
                        acc_b = alpha * cb + (1.0 - alpha) * acc_b
                        acc_d = alpha * cd + (1.0 - alpha) * acc_d
                        acc_a = alpha + (1.0 - alpha) * acc_a
                        if raw > ALPHA_MAX:
                            continue
                        d_opacity[gi] += G * d_alpha
                        d_power = alpha * d_alpha
                        d_means2d[gi, 0] += d_power * (conics[gi, 0] * dx + conics[gi, 1] * dy)
                        d_means2d[gi, 1] += d_power * (conics[gi, 1] * dx + conics[gi, 2] * dy)
                        d_conics[gi, 0] += -0.5 * dx * dx * d_power
                        d_conics[gi, 1] += -dx * dy * d_power
                        d_conics[gi, 2] += -0.5 * dy * dy * d_power


@njit(cache=True)
def project_backward(mu, quat, log_scale, sh, Rc, tc, campos, fx, fy, cx, cy, blur,
                     radii, cov3d, conics,
                     d_means2d, d_conics, d_colors, d_depths,
                     d_mu, d_quat, d_log_scale, d_sh):
    n = mu.shape[0]
    n_coeff = sh.shape[1]
    Rq = np.empty((3, 3))
    M = np.empty((3, 3))
    T = np.empty((2, 3))
    dT = np.empty((2, 3))
    dSig = np.empty((3, 3))
    dM = np.empty((3, 3))
    b = np.empty(16)
    bx = np.empty(16)
    by = np.empty(16)
    bz = np.empty(16)
    for i in range(n):
        if radii[i] <= 0.0:
            continue
        tx = Rc[0, 0] * mu[i, 0] + Rc[0, 1] * mu[i, 1] + Rc[0, 2] * mu[i, 2] + tc[0]
        ty = Rc[1, 0] * mu[i, 0] + Rc[1, 1] * mu[i, 1] + Rc[1, 2] * mu[i, 2] + tc[1]
        tz = Rc[2, 0] * mu[i, 0] + Rc[2, 1] * mu[i, 1] + Rc[2, 2] * mu[i, 2] + tc[2]
        iz = 1.0 / tz
        # gradient w.r.t. the camera-frame point
        gtx = d_means2d[i, 0] * fx * iz
        gty = d_means2d[i, 1] * fy * iz
        gtz = d_depths[i] - d_means2d[i, 0] * fx * tx * iz * iz - d_means2d[i, 1] * fy * ty * iz * iz

        # conic = inv(cov2): dCov2 = -Q G Q with G the symmetric matrix gradient
        qa, qb, qc = conics[i, 0], conics[i, 1], conics[i, 2]
        ga, gb, gc = d_conics[i, 0], 0.5 * d_conics[i, 1], d_conics[i, 2]
        # P = Q G
        p00 = qa * ga + qb * gb
        p01 = qa * gb + qb * gc
        p10 = qb * ga + qc * gb
        p11 = qb * gb + qc * gc
        c00 = -(p00 * qa + p01 * qb)
        c01 = -(p00 * qb + p01 * qc)
        c11 = -(p10 * qb + p11 * qc)

        j00 = fx * iz
        j02 = -fx * tx * iz * iz
        j11 = fy * iz
        j12 = -fy * ty * iz * iz
        for c in range(3):
            T[0, c] = j00 * Rc[0, c] + j02 * Rc[2, c]
            T[1, c] = j11 * Rc[1, c] + j12 * Rc[2, c]
        # dSigma = T^T dCov2 T
        for r in range(3):
            for c in range(3):
                dSig[r, c] = (
                    T[0, r] * (c00 * T[0, c] + c01 * T[1, c]) + T[1, r] * (c01 * T[0, c] + c11 * T[1, c])
                )
        # dT = 2 dCov2 T Sigma
        for c in range(3):
            ts0 = T[0, 0] * cov3d[i, 0, c] + T[0, 1] * cov3d[i, 1, c] + T[0, 2] * cov3d[i, 2, c]
            ts1 = T[1, 0] * cov3d[i, 0, c] + T[1, 1] * cov3d[i, 1, c] + T[1, 2] * cov3d[i, 2, c]
            dT[0, c] = 2.0 * (c00 * ts0 + c01 * ts1)
            dT[1, c] = 2.0 * (c01 * ts0 + c11 * ts1)
        # dJ = dT Rc^T (only the four non-constant entries matter)
        dj00 = dT[0, 0] * Rc[0, 0] + dT[0, 1] * Rc[0, 1] + dT[0, 2] * Rc[0, 2]
        dj02 = dT[0, 0] * Rc[2, 0] + dT[0, 1] * Rc[2, 1] + dT[0, 2] * Rc[2, 2]
        dj11 = dT[1, 0] * Rc[1, 0] + dT[1, 1] * Rc[1, 1] + dT[1, 2] * Rc[1, 2]
        dj12 = dT[1, 0] * Rc[2, 0] + dT[1, 1] * Rc[2, 1] + dT[1, 2] * Rc[2, 2]
        iz2 = iz * iz
        iz3 = iz2 * iz
        gtx += dj02 * (-fx * iz2)
        gty += dj12 * (-fy * iz2)
        gtz += dj00 * (-fx * iz2) + dj02 * (2.0 * fx * tx * iz3) + dj11 * (-fy * iz2) + dj12 * (2.0 * fy * ty * iz3)

        for c in range(3):
            d_mu[i, c] += Rc[0, c] * gtx + Rc[1, c] * gty + Rc[2, c] * gtz

        # Sigma = M M^T, M = Rq diag(s)
        w, x, y, z, qn = _quat_rot(quat[i, 0], quat[i, 1], quat[i, 2], quat[i, 3], Rq)
        for r in range(3):
            for c in range(3):
                M[r, c] = Rq[r, c] * math.exp(log_scale[i, c])
        for r in range(3):
            for c in range(3):
                dM[r, c] = 2.0 * (dSig[r, 0] * M[0, c] + dSig[r, 1] * M[1, c] + dSig[r, 2] * M[2, c])
        s0 = math.exp(log_scale[i, 0])
        s1 = math.exp(log_scale[i, 1])
        s2 = math.exp(log_scale[i, 2])
        d_log_scale[i, 0] += s0 * (dM[0, 0] * Rq[0, 0] + dM[1, 0] * Rq[1, 0] + dM[2, 0] * Rq[2, 0])
        d_log_scale[i, 1] += s1 * (dM[0, 1] * Rq[0, 1] + dM[1, 1] * Rq[1, 1] + dM[2, 1] * Rq[2, 1])
        d_log_scale[i, 2] += s2 * (dM[0, 2] * Rq[0, 2] + dM[1, 2] * Rq[1, 2] + dM[2, 2] * Rq[2, 2])
        # dL/dRq
        G00, G10, G20 = dM[0, 0] * s0, dM[1, 0] * s0, dM[2, 0] * s0
        G01, G11, G21 = dM[0, 1] * s1, dM[1, 1] * s1, dM[2, 1] * s1
        G02, G12, G22 = dM[0, 2] * s2, dM[1, 2] * s2, dM[2, 2] * s2
        dw = 2.0 * (-z * G01 + y * G02 + z * G10 - x * G12 - y * G20 + x * G21)
        dx = 2.0 * (y * G01 + z * G02 + y * G10 - 2 * x * G11 - w * G12 + z * G20 + w * G21 - 2 * x * G22)
        dy = 2.0 * (-2 * y * G00 + x * G01 + w * G02 + x * G10 + z * G12 - w * G20 + z * G21 - 2 * y * G22)
        dz = 2.0 * (-2 * z * G00 - w * G01 + x * G02 + w * G10 - 2 * z * G11 + y * G12 + x * G20 + y * G21)
        dot = w * dw + x * dx + y * dy + z * dz
        d_quat[i, 0] += (dw - w * dot) / qn
        d_quat[i, 1] += (dx - x * dot) / qn
        d_quat[i, 2] += (dy - y * dot) / qn
        d_quat[i, 3] += (dz - z * dot) / qn

        # view-dependent color
        vx = mu[i, 0] - campos[0]
        vy = mu[i, 1] - campos[1]
        vz = mu[i, 2] - campos[2]
        vn = max(math.sqrt(vx * vx + vy * vy + vz * vz), 1e-12)
        ux, uy, uz = vx / vn, vy / vn, vz / vn
        sh_basis_grad(ux, uy, uz, n_coeff, b, bx, by, bz)
        gdx = 0.0
        gdy = 0.0
        gdz = 0.0
        for ch in range(3):
            v = 0.5
            for k in range(n_coeff):
                v += b[k] * sh[i, k, ch]
            if v <= 0.0:
                continue
            g = d_colors[i, ch]
            for k in range(n_coeff):
                d_sh[i, k, ch] += b[k] * g
                gdx += g * sh[i, k, ch] * bx[k]
                gdy += g * sh[i, k, ch] * by[k]
                gdz += g * sh[i, k, ch] * bz[k]
        dd = ux * gdx + uy * gdy + uz * gdz
        d_mu[i, 0] += (gdx - ux * dd) / vn
        d_mu[i, 1] += (gdy - uy * dd) / vn
        d_mu[i, 2] += (gdz - uz * dd) / vn

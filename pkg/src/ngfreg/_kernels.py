"""Fused per-pixel loops for sampling and NGF evaluation.

All loops are serial with a fixed traversal order, so results are
bitwise reproducible. Finite differences follow ``image.gradient``: central
inside, one-sided on the border, written as ``(f[p] - f[m]) / ((p - m) h)``.
"""

import numpy as np
from numba import njit

AFFINE = 0
RIGID = 1


@njit(cache=True, inline="always")
def _bilinear(padded, ox, oy, h, p1, p2):
    hp, wp = padded.shape
    u = (p1 - ox) / h + 0.5
    v = (p2 - oy) / h + 0.5
    if not (u >= 0.0 and u <= wp - 1 and v >= 0.0 and v <= hp - 1):
        return 0.0, 0.0, 0.0
    j0 = min(int(u), wp - 2)
    i0 = min(int(v), hp - 2)
    fx = u - j0
    fy = v - i0
    f00 = padded[i0, j0]
    f01 = padded[i0, j0 + 1]
    f10 = padded[i0 + 1, j0]
    f11 = padded[i0 + 1, j0 + 1]
    top = f00 + fx * (f01 - f00)
    bottom = f10 + fx * (f11 - f10)
    val = top + fy * (bottom - top)
    d1 = ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10)) / h
    d2 = (bottom - top) / h
    return val, d1, d2


@njit(cache=True)
def sample_linear(padded, ox, oy, h, xs, ys, A, b, vals, slope):
    """Sample at ``A x + b`` for every grid point ``x = (xs[j], ys[i])``."""
    for i in range(ys.shape[0]):
        y = ys[i]
        for j in range(xs.shape[0]):
            x = xs[j]
            p1 = A[0, 0] * x + A[0, 1] * y + b[0]
            p2 = A[1, 0] * x + A[1, 1] * y + b[1]
            v, d1, d2 = _bilinear(padded, ox, oy, h, p1, p2)
            vals[i, j] = v
            slope[i, j, 0] = d1
            slope[i, j, 1] = d2


@njit(cache=True)
def sample_points(padded, ox, oy, h, P, vals, slope):
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            v, d1, d2 = _bilinear(padded, ox, oy, h, P[i, j, 0], P[i, j, 1])
            vals[i, j] = v
            slope[i, j, 0] = d1
            slope[i, j, 1] = d2


@njit(cache=True)
def grad(f, h, out):
    H, W = f.shape
    for i in range(H):
        im = max(i - 1, 0)
        ip = min(i + 1, H - 1)
        sy = 1.0 / ((ip - im) * h)
        for j in range(W):
            jm = max(j - 1, 0)
            jp = min(j + 1, W - 1)
            out[0, i, j] = (f[i, jp] - f[i, jm]) * (1.0 / ((jp - jm) * h))
            out[1, i, j] = (f[ip, j] - f[im, j]) * sy


@njit(cache=True, inline="always")
def _misfit(g1, g2, r1, r2, aR, eps2):
    aT = g1 * g1 + g2 * g2 + eps2
    cross = g1 * r2 - g2 * r1
    d1 = g1 - r1
    d2 = g2 - r2
    denom = aT * aR
    return (cross * cross + eps2 * (d1 * d1 + d2 * d2)) / denom, aT, denom


@njit(cache=True)
def ngf_value(Ty, gR, aR, eps2, h):
    H, W = Ty.shape
    total = 0.0
    for i in range(H):
        im = max(i - 1, 0)
        ip = min(i + 1, H - 1)
        sy = 1.0 / ((ip - im) * h)
        for j in range(W):
            jm = max(j - 1, 0)
            jp = min(j + 1, W - 1)
            g1 = (Ty[i, jp] - Ty[i, jm]) * (1.0 / ((jp - jm) * h))
            g2 = (Ty[ip, j] - Ty[im, j]) * sy
            m, _, _ = _misfit(g1, g2, gR[0, i, j], gR[1, i, j], aR[i, j], eps2)
            total += m
    return h * h * total


@njit(cache=True)
def ngf_adjoint(Ty, gR, aR, eps2, h, d_Ty):
    """NGF value; writes ``dNGF/dTy`` into ``d_Ty``."""
    H, W = Ty.shape
    d_Ty[:, :] = 0.0
    total = 0.0
    scale = -2.0 * h * h
    for i in range(H):
        im = max(i - 1, 0)
        ip = min(i + 1, H - 1)
        sy = 1.0 / ((ip - im) * h)
        for j in range(W):
            jm = max(j - 1, 0)
            jp = min(j + 1, W - 1)
            sx = 1.0 / ((jp - jm) * h)
            g1 = (Ty[i, jp] - Ty[i, jm]) * sx
            g2 = (Ty[ip, j] - Ty[im, j]) * sy
            r1 = gR[0, i, j]
            r2 = gR[1, i, j]
            m, aT, denom = _misfit(g1, g2, r1, r2, aR[i, j], eps2)
            total += m
            n = g1 * r1 + g2 * r2 + eps2
            root = np.sqrt(denom)
            r = n / root
            w = scale * r / root
            w1 = w * (r1 - (n / aT) * g1) * sx
            w2 = w * (r2 - (n / aT) * g2) * sy
            d_Ty[i, jp] += w1
            d_Ty[i, jm] -= w1
            d_Ty[ip, j] += w2
            d_Ty[im, j] -= w2
    return h * h * total


@njit(cache=True, inline="always")
def _sens(kind, s1, s2, x, y, cx, cy, cphi, sphi, out):
    if kind == AFFINE:
        out[0] = s1 * x
        out[1] = s1 * y
        out[2] = s1
        out[3] = s2 * x
        out[4] = s2 * y
        out[5] = s2
    else:
        dx = x - cx
        dy = y - cy
        out[0] = s1 * (-sphi * dx - cphi * dy) + s2 * (cphi * dx - sphi * dy)
        out[1] = s1
        out[2] = s2


@njit(cache=True)
def gauss_newton_system(Ty, slope, xs, ys, gR, aR, eps2, h, kind, cx, cy, phi):
    """Value, ``2 h^2 J^T J`` and ``-2 h^2 J^T r`` with ``J = dr/dtheta``."""
    H, W = Ty.shape
    K = 6 if kind == AFFINE else 3
    cphi = np.cos(phi)
    sphi = np.sin(phi)
    sens = np.empty((H, W, K))
    for i in range(H):
        for j in range(W):
            _sens(kind, slope[i, j, 0], slope[i, j, 1], xs[j], ys[i], cx, cy, cphi, sphi, sens[i, j])
    JtJ = np.zeros((K, K))
    Jtr = np.zeros(K)
    J = np.empty(K)
    total = 0.0
    for i in range(H):
        im = max(i - 1, 0)
        ip = min(i + 1, H - 1)
        sy = 1.0 / ((ip - im) * h)
        for j in range(W):
            jm = max(j - 1, 0)
            jp = min(j + 1, W - 1)
            sx = 1.0 / ((jp - jm) * h)
            g1 = (Ty[i, jp] - Ty[i, jm]) * sx
            g2 = (Ty[ip, j] - Ty[im, j]) * sy
            r1 = gR[0, i, j]
            r2 = gR[1, i, j]
            m, aT, denom = _misfit(g1, g2, r1, r2, aR[i, j], eps2)
            total += m
            n = g1 * r1 + g2 * r2 + eps2
            root = np.sqrt(denom)
            r = n / root
            dr1 = (r1 - (n / aT) * g1) / root * sx
            dr2 = (r2 - (n / aT) * g2) / root * sy
            for k in range(K):
                J[k] = dr1 * (sens[i, jp, k] - sens[i, jm, k]) + dr2 * (sens[ip, j, k] - sens[im, j, k])
            for k in range(K):
                Jtr[k] += J[k] * r
                for l in range(k, K):
                    JtJ[k, l] += J[k] * J[l]
    for k in range(K):
        for l in range(k):
            JtJ[k, l] = JtJ[l, k]
    scale = 2.0 * h * h
    return h * h * total, scale * JtJ, -scale * Jtr

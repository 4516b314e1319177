"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np

_EPS_F = 216.0 / 24389.0
_KAPPA_F = 24389.0 / 27.0 / 116.0
_DELTA = 6.0 / 29.0


def _expand(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _compand(c):
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _EPS_F, np.cbrt(t), t * _KAPPA_F + 4.0 / 29.0)


def _finv(t):
    return np.where(t > _DELTA, t * t * t, 3.0 * _DELTA * _DELTA * (t - 4.0 / 29.0))


def srgb_to_lab(rgb, m, white):
    lin = _expand(rgb.astype(np.float64) / 255.0)
    r, g, b = lin[:, 0], lin[:, 1], lin[:, 2]
    x = (m[0, 0] * r + m[0, 1] * g + m[0, 2] * b) / white[0]
    y = (m[1, 0] * r + m[1, 1] * g + m[1, 2] * b) / white[1]
    z = (m[2, 0] * r + m[2, 1] * g + m[2, 2] * b) / white[2]
    fx, fy, fz = _f(x), _f(y), _f(z)
    out = np.empty((rgb.shape[0], 3), dtype=np.float64)
    out[:, 0] = 116.0 * fy - 16.0
    out[:, 1] = 500.0 * (fx - fy)
    out[:, 2] = 200.0 * (fy - fz)
    return out


def lab_to_srgb(lab, minv, white):
    fy = (lab[:, 0] + 16.0) / 116.0
    fx = fy + lab[:, 1] / 500.0
    fz = fy - lab[:, 2] / 200.0
    x = white[0] * _finv(fx)
    y = white[1] * _finv(fy)
    z = white[2] * _finv(fz)
    out = np.empty((lab.shape[0], 3), dtype=np.uint8)
    for c in range(3):
        lin = minv[c, 0] * x + minv[c, 1] * y + minv[c, 2] * z
        lin = np.clip(lin, 0.0, 1.0)
        out[:, c] = np.clip(np.floor(_compand(lin) * 255.0 + 0.5), 0.0, 255.0)
    return out


def nearest_k(pts, centers, k):
    da = pts[:, 0:1] - centers[None, :, 0]
    db = pts[:, 1:2] - centers[None, :, 1]
    d2 = da * da + db * db
    # stable sort keeps the lower center index first among equal distances
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order.astype(np.int64), np.take_along_axis(d2, order, axis=1)


def nearest_k_grid(pts, centers, table, lo, step, k, r=2):
    # the grid window only prunes the search; the exact answer is the full scan
    return nearest_k(pts, centers, k)


def min_hamming(pool, chosen, block=256):
    out = np.full(pool.shape[0], pool.shape[1] + 1, dtype=np.int32)
    for s in range(0, chosen.shape[0], block):
        d = (pool[:, None, :] != chosen[None, s:s + block, :]).sum(axis=2, dtype=np.int32)
        np.minimum(out, d.min(axis=1), out=out)
    return out


def _out_size(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    N, C, H, W = x.shape
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((C, k, k, N, Ho, Wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = xp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride].transpose(1, 0, 2, 3)
    return cols.reshape(C * k * k, N * Ho * Wo)


im2col_f32 = im2col


def col2im(cols, N, C, H, W, k, stride, pad):
    Ho, Wo = _out_size(H, k, stride, pad), _out_size(W, k, stride, pad)
    c6 = cols.reshape(C, k, k, N, Ho, Wo)
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += c6[:, ki, kj].transpose(1, 0, 2, 3)
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])
    return xp


col2im_f32 = col2im

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Every function mirrors one in ``_pykernels`` and must
produce the same result (bit-identical for integer outputs and for the
im2col/col2im accumulation order)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, cbrt, floor

cnp.import_array()

cdef double _EPS_F = 216.0 / 24389.0          # (6/29)^3
cdef double _KAPPA_F = 24389.0 / 27.0 / 116.0  # 1 / (3 (6/29)^2)
cdef double _DELTA = 6.0 / 29.0


cdef inline double _expand(double c) noexcept nogil:
    if c <= 0.04045:
        return c / 12.92
    return pow((c + 0.055) / 1.055, 2.4)


cdef inline double _compand(double c) noexcept nogil:
    if c <= 0.0031308:
        return 12.92 * c
    return 1.055 * pow(c, 1.0 / 2.4) - 0.055


cdef inline double _f(double t) noexcept nogil:
    if t > _EPS_F:
        return cbrt(t)
    return t * _KAPPA_F + 4.0 / 29.0


cdef inline double _finv(double t) noexcept nogil:
    if t > _DELTA:
        return t * t * t
    return 3.0 * _DELTA * _DELTA * (t - 4.0 / 29.0)


def srgb_to_lab(const unsigned char[:, ::1] rgb, const double[:, ::1] m, const double[::1] white):
    cdef Py_ssize_t n = rgb.shape[0], i
    out = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double r, g, b, fx, fy, fz
    cdef double lut[256]
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22, w0, w1, w2
    for i in range(256):
        lut[i] = _expand(i / 255.0)
    m00, m01, m02 = m[0, 0], m[0, 1], m[0, 2]
    m10, m11, m12 = m[1, 0], m[1, 1], m[1, 2]
    m20, m21, m22 = m[2, 0], m[2, 1], m[2, 2]
    w0, w1, w2 = white[0], white[1], white[2]
    with nogil:
        for i in range(n):
            r = lut[rgb[i, 0]]
            g = lut[rgb[i, 1]]
            b = lut[rgb[i, 2]]
            fx = _f((m00 * r + m01 * g + m02 * b) / w0)
            fy = _f((m10 * r + m11 * g + m12 * b) / w1)
            fz = _f((m20 * r + m21 * g + m22 * b) / w2)
            o[i, 0] = 116.0 * fy - 16.0
            o[i, 1] = 500.0 * (fx - fy)
            o[i, 2] = 200.0 * (fy - fz)
    return out


def lab_to_srgb(const double[:, ::1] lab, const double[:, ::1] minv, const double[::1] white):
    cdef Py_ssize_t n = lab.shape[0], i, c
    out = np.empty((n, 3), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    cdef double fy, fx, fz, x, y, z, v
    cdef double lin[3]
    with nogil:
        for i in range(n):
            fy = (lab[i, 0] + 16.0) / 116.0
            fx = fy + lab[i, 1] / 500.0
            fz = fy - lab[i, 2] / 200.0
            x = white[0] * _finv(fx)
            y = white[1] * _finv(fy)
            z = white[2] * _finv(fz)
            for c in range(3):
                lin[c] = minv[c, 0] * x + minv[c, 1] * y + minv[c, 2] * z
                if lin[c] < 0.0:
                    lin[c] = 0.0
                elif lin[c] > 1.0:
                    lin[c] = 1.0
                v = floor(_compand(lin[c]) * 255.0 + 0.5)
                if v < 0.0:
                    v = 0.0
                elif v > 255.0:
                    v = 255.0
                o[i, c] = <unsigned char>v
    return out


def nearest_k(const double[:, ::1] pts, const double[:, ::1] centers, int k):
    """k nearest centers per point by squared distance; ties keep the lower index."""
    cdef Py_ssize_t m = pts.shape[0], q = centers.shape[0], i, j, t, s
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] oi = idx
    cdef double[:, ::1] od = d2
    cdef double da, db, d
    with nogil:
        for i in range(m):
            t = 0
            for j in range(q):
                da = pts[i, 0] - centers[j, 0]
                db = pts[i, 1] - centers[j, 1]
                d = da * da + db * db
                if t < k:
                    s = t
                    t += 1
                elif d < od[i, k - 1]:
                    s = k - 1
                else:
                    continue
                # insertion keeps (distance, index) order; strict < preserves lower index on ties
                while s > 0 and d < od[i, s - 1]:
                    od[i, s] = od[i, s - 1]
                    oi[i, s] = oi[i, s - 1]
                    s -= 1
                od[i, s] = d
                oi[i, s] = j
    return idx, d2


cdef inline void _offer(double d, cnp.int64_t j, Py_ssize_t k, Py_ssize_t* t,
                        double* od, cnp.int64_t* oi) noexcept nogil:
    # keep the k best by (distance, index)
    cdef Py_ssize_t s
    if t[0] < k:
        s = t[0]
        t[0] += 1
    elif d < od[k - 1] or (d == od[k - 1] and j < oi[k - 1]):
        s = k - 1
    else:
        return
    while s > 0 and (d < od[s - 1] or (d == od[s - 1] and j < oi[s - 1])):
        od[s] = od[s - 1]
        oi[s] = oi[s - 1]
        s -= 1
    od[s] = d
    oi[s] = j


def nearest_k_grid(const double[:, ::1] pts, const double[:, ::1] centers, const cnp.int64_t[:, ::1] table,
                   double lo, double step, int k, int r=2):
    """Same result as nearest_k, scanning only the (2r+1)^2 grid cells around each point.

    Centers outside the window are at least (r + 0.5) * step away; points
    whose k-th distance is not below that bound fall back to a full scan.
    """
    cdef Py_ssize_t m = pts.shape[0], q = centers.shape[0], n = table.shape[0], i, j, t, ca, cb, u, v
    cdef double da, db, d, bound = (r + 0.5) * step
    bound = bound * bound
    idx = np.empty((m, k), dtype=np.int64)
    d2 = np.empty((m, k), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] oi = idx
    cdef double[:, ::1] od = d2
    with nogil:
        for i in range(m):
            t = 0
            ca = <Py_ssize_t>floor((pts[i, 0] - lo) / step)
            cb = <Py_ssize_t>floor((pts[i, 1] - lo) / step)
            if 0 <= ca < n and 0 <= cb < n:
                for u in range(max(ca - r, 0), min(ca + r + 1, n)):
                    for v in range(max(cb - r, 0), min(cb + r + 1, n)):
                        j = table[u, v]
                        if j < 0:
                            continue
                        da = pts[i, 0] - centers[j, 0]
                        db = pts[i, 1] - centers[j, 1]
                        _offer(da * da + db * db, j, k, &t, &od[i, 0], &oi[i, 0])
                if t == k and od[i, k - 1] < bound:
                    continue
            t = 0
            for j in range(q):
                da = pts[i, 0] - centers[j, 0]
                db = pts[i, 1] - centers[j, 1]
                _offer(da * da + db * db, j, k, &t, &od[i, 0], &oi[i, 0])
    return idx, d2


cdef inline cnp.uint64_t _pack(const unsigned char[:, ::1] rows, Py_ssize_t i) nogil:
    cdef cnp.uint64_t v = 0
    cdef Py_ssize_t t
    for t in range(rows.shape[1]):
        v |= (<cnp.uint64_t>(rows[i, t] & 15)) << (4 * t)
    return v


cdef inline int _nibble_diff(cnp.uint64_t x) nogil:
    x = (x | (x >> 1) | (x >> 2) | (x >> 3)) & 0x1111111111111111ULL
    return __builtin_popcountll(x)


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def min_hamming(const unsigned char[:, ::1] pool, const unsigned char[:, ::1] chosen):
    """Per pool row: minimum Hamming distance to any chosen row.

    Rows are packed as 4-bit nibbles (n <= 16, entries < 16). Rows that
    provably cannot reach the running best are cut short; their returned
    value is then some number strictly below the final maximum.
    """
    cdef Py_ssize_t p = pool.shape[0], c = chosen.shape[0], n = pool.shape[1]
    cdef Py_ssize_t i, j
    cdef int best = -1, cur, d
    if n > 16:
        raise ValueError("min_hamming supports at most 16 pieces")
    out = np.empty(p, dtype=np.int32)
    cdef int[::1] o = out
    packed = np.empty(c, dtype=np.uint64)
    cdef cnp.uint64_t[::1] cp = packed
    cdef cnp.uint64_t x
    with nogil:
        for j in range(c):
            cp[j] = _pack(chosen, j)
        for i in range(p):
            x = _pack(pool, i)
            cur = <int>n + 1
            for j in range(c):
                d = _nibble_diff(x ^ cp[j])
                if d < cur:
                    cur = d
                    if cur < best:
                        break
            o[i] = cur
            if cur > best:
                best = cur
    return out


def im2col(const double[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t L = Ho * Wo
    cols = np.zeros((C * k * k, N * L), dtype=np.float64)
    cdef double[:, ::1] o = cols
    cdef Py_ssize_t c, ki, kj, n, i, j, r, hi, wj
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    r = (c * k + ki) * k + kj
                    for n in range(N):
                        for i in range(Ho):
                            hi = i * stride + ki - pad
                            if hi < 0 or hi >= H:
                                continue
                            for j in range(Wo):
                                wj = j * stride + kj - pad
                                if wj < 0 or wj >= W:
                                    continue
                                o[r, n * L + i * Wo + j] = x[n, c, hi, wj]
    return cols


def im2col_f32(const float[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t L = Ho * Wo
    cols = np.zeros((C * k * k, N * L), dtype=np.float32)
    cdef float[:, ::1] o = cols
    cdef Py_ssize_t c, ki, kj, n, i, j, r, hi, wj
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    r = (c * k + ki) * k + kj
                    for n in range(N):
                        for i in range(Ho):
                            hi = i * stride + ki - pad
                            if hi < 0 or hi >= H:
                                continue
                            for j in range(Wo):
                                wj = j * stride + kj - pad
                                if wj < 0 or wj >= W:
                                    continue
                                o[r, n * L + i * Wo + j] = x[n, c, hi, wj]
    return cols


def col2im(const double[:, ::1] cols, Py_ssize_t N, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int k, int stride, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t L = Ho * Wo
    x = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = x
    cdef Py_ssize_t c, ki, kj, n, i, j, r, hi, wj
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    r = (c * k + ki) * k + kj
                    for n in range(N):
                        for i in range(Ho):
                            hi = i * stride + ki - pad
                            if hi < 0 or hi >= H:
                                continue
                            for j in range(Wo):
                                wj = j * stride + kj - pad
                                if wj < 0 or wj >= W:
                                    continue
                                o[n, c, hi, wj] += cols[r, n * L + i * Wo + j]
    return x


def col2im_f32(const float[:, ::1] cols, Py_ssize_t N, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
               int k, int stride, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - k) // stride + 1
    cdef Py_ssize_t L = Ho * Wo
    x = np.zeros((N, C, H, W), dtype=np.float32)
    cdef float[:, :, :, ::1] o = x
    cdef Py_ssize_t c, ki, kj, n, i, j, r, hi, wj
    with nogil:
        for c in range(C):
            for ki in range(k):
                for kj in range(k):
                    r = (c * k + ki) * k + kj
                    for n in range(N):
                        for i in range(Ho):
                            hi = i * stride + ki - pad
                            if hi < 0 or hi >= H:
                                continue
                            for j in range(Wo):
                                wj = j * stride + kj - pad
                                if wj < 0 or wj >= W:
                                    continue
                                o[n, c, hi, wj] += cols[r, n * L + i * Wo + j]
    return x

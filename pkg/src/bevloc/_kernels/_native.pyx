# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel implementations.

Same contracts and the same per-element arithmetic as `_fallback`; the
scanline fill and the splat are expected to agree bitwise with numpy.
"""

import numpy as np

from libc.math cimport ceil, floor, sqrt

NAME = "native"


cdef inline void _fill_span(unsigned char[:, ::1] grid, Py_ssize_t r,
                            double lo, double hi, double ox, double res,
                            Py_ssize_t w) nogil:
    # Set cells whose center x = ox + c*res lies in [lo, hi]; the direct
    # comparison (not the index arithmetic) is the authority.
    cdef Py_ssize_t c_lo, c_hi, c
    cdef double v
    c_lo = <Py_ssize_t>ceil((lo - ox) / res) - 1
    if c_lo < 0:
        c_lo = 0
    c_hi = <Py_ssize_t>floor((hi - ox) / res) + 1
    if c_hi > w - 1:
        c_hi = w - 1
    for c in range(c_lo, c_hi + 1):
        v = ox + c * res
        if lo <= v <= hi:
            grid[r, c] = 1


def fill_polygon(unsigned char[:, ::1] grid, double[:, ::1] poly,
                 double ox, double oy, double res):
    """OR a polygon into a (H, W) uint8 cell-center grid (even-odd rule,
    boundary centers inside). See `_fallback.fill_polygon`."""
    cdef Py_ssize_t h = grid.shape[0]
    cdef Py_ssize_t w = grid.shape[1]
    cdef Py_ssize_t n = poly.shape[0]
    cdef double[::1] buf = np.empty(n, dtype=np.float64)
    cdef double xmin = poly[0, 0], xmax = poly[0, 0]
    cdef double ymin = poly[0, 1], ymax = poly[0, 1]
    cdef Py_ssize_t e, r, m, k, i
    cdef Py_ssize_t r0, r1
    cdef double ax, ay, bx, by, ycs, t, lo, hi, key

    for e in range(1, n):
        if poly[e, 0] < xmin:
            xmin = poly[e, 0]
        if poly[e, 0] > xmax:
            xmax = poly[e, 0]
        if poly[e, 1] < ymin:
            ymin = poly[e, 1]
        if poly[e, 1] > ymax:
            ymax = poly[e, 1]

    r0 = <Py_ssize_t>floor((ymin - oy) / res) - 1
    if r0 < 0:
        r0 = 0
    r1 = <Py_ssize_t>ceil((ymax - oy) / res) + 1
    if r1 > h - 1:
        r1 = h - 1

    with nogil:
        for r in range(r0, r1 + 1):
            ycs = oy + r * res
            m = 0
            for e in range(n):
                ax = poly[e, 0]
                ay = poly[e, 1]
                if e + 1 < n:
                    bx = poly[e + 1, 0]
                    by = poly[e + 1, 1]
                else:
                    bx = poly[0, 0]
                    by = poly[0, 1]
                if ay == by:
                    # Edge collinear with the scanline: boundary interval.
                    if ay == ycs and ax != bx:
                        if ax < bx:
                            _fill_span(grid, r, ax, bx, ox, res, w)
                        else:
                            _fill_span(grid, r, bx, ax, ox, res, w)
                    continue
                if (ay <= ycs < by) or (by <= ycs < ay):
                    t = (ycs - ay) * (bx - ax) / (by - ay)
                    buf[m] = ax + t
                    m += 1
            # insertion sort of the few crossings
            for k in range(1, m):
                key = buf[k]
                i = k - 1
                while i >= 0 and buf[i] > key:
                    buf[i + 1] = buf[i]
                    i -= 1
                buf[i + 1] = key
            k = 0
            while k + 1 < m:
                _fill_span(grid, r, buf[k], buf[k + 1], ox, res, w)
                k += 2


def splat_volume(double[:, :, :, ::1] vol, double[:, :, ::1] wgt,
                 double[:, :, ::1] feat, double[:, :, ::1] hdist,
                 double[:, :, ::1] mats, double ox, double oy, double res):
    """Accumulate one camera into the occupancy volume.
    See `_fallback.splat_volume`."""
    cdef Py_ssize_t s0 = vol.shape[0]
    cdef Py_ssize_t s1 = vol.shape[1]
    cdef Py_ssize_t k_bins = vol.shape[2]
    cdef Py_ssize_t n_ch = vol.shape[3]
    cdef Py_ssize_t hf = feat.shape[0]
    cdef Py_ssize_t wf = feat.shape[1]
    cdef Py_ssize_t r, c, k, ch, iu, iv
    cdef double x, y, depth, u, v, u0, v0, fu, fv
    cdef double w00, w01, w10, w11, wh, f
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22

    with nogil:
        for k in range(k_bins):
            m00 = mats[k, 0, 0]
            m01 = mats[k, 0, 1]
            m02 = mats[k, 0, 2]
            m10 = mats[k, 1, 0]
            m11 = mats[k, 1, 1]
            m12 = mats[k, 1, 2]
            m20 = mats[k, 2, 0]
            m21 = mats[k, 2, 1]
            m22 = mats[k, 2, 2]
            for r in range(s0):
                y = oy + r * res
                for c in range(s1):
                    x = ox + c * res
                    depth = m20 * x + m21 * y + m22
                    if depth <= 0.0:
                        continue
                    u = (m00 * x + m01 * y + m02) / depth
                    v = (m10 * x + m11 * y + m12) / depth
                    if u < 0.0 or u > wf - 1.0 or v < 0.0 or v > hf - 1.0:
                        continue
                    u0 = floor(u)
                    if u0 > wf - 2.0:
                        u0 = wf - 2.0
                    v0 = floor(v)
                    if v0 > hf - 2.0:
                        v0 = hf - 2.0
                    fu = u - u0
                    fv = v - v0
                    iu = <Py_ssize_t>u0
                    iv = <Py_ssize_t>v0
                    w00 = (1.0 - fu) * (1.0 - fv)
                    w01 = fu * (1.0 - fv)
                    w10 = (1.0 - fu) * fv
                    w11 = fu * fv
                    wh = (w00 * hdist[iv, iu, k] + w01 * hdist[iv, iu + 1, k]
                          + w10 * hdist[iv + 1, iu, k]
                          + w11 * hdist[iv + 1, iu + 1, k])
                    if wh <= 0.0:
                        continue
                    wgt[r, c, k] += wh
                    for ch in range(n_ch):
                        f = (w00 * feat[iv, iu, ch] + w01 * feat[iv, iu + 1, ch]
                             + w10 * feat[iv + 1, iu, ch]
                             + w11 * feat[iv + 1, iu + 1, ch])
                        vol[r, c, k, ch] += f * wh


def masked_corr(double[:, :, ::1] tile, double[:, :, ::1] tmpl,
                double[:, ::1] mask):
    """Direct masked cosine correlation over all valid offsets.
    See `_fallback.masked_corr`."""
    cdef Py_ssize_t n_ch = tile.shape[0]
    cdef Py_ssize_t l0 = tile.shape[1]
    cdef Py_ssize_t l1 = tile.shape[2]
    cdef Py_ssize_t s0 = tmpl.shape[1]
    cdef Py_ssize_t s1 = tmpl.shape[2]
    cdef Py_ssize_t na = l0 - s0 + 1
    cdef Py_ssize_t nb = l1 - s1 + 1

    mt_arr = np.asarray(tmpl) * np.asarray(mask)
    cdef double[:, :, ::1] mt = mt_arr
    cdef double den_t = sqrt(float(np.sum(mt_arr * mt_arr)))
    out = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, c, a, b
    cdef double num, energy, t, den, s

    with nogil:
        for i in range(na):
            for j in range(nb):
                num = 0.0
                energy = 0.0
                for c in range(n_ch):
                    for a in range(s0):
                        for b in range(s1):
                            t = tile[c, i + a, j + b]
                            num += mt[c, a, b] * t
                            energy += mask[a, b] * t * t
                den = den_t * sqrt(energy if energy > 0.0 else 0.0)
                if den > 0.0:
                    s = num / den
                    if s > 1.0:
                        s = 1.0
                    elif s < -1.0:
                        s = -1.0
                    ov[i, j] = s
    return out

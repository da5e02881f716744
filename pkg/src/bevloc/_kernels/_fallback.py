"""Pure-numpy kernel implementations.

Mirror of the Cython module `_native`: the fill and splat kernels compute
the same quantities with the same per-element arithmetic (expression
order matters — the two backends are expected to agree bitwise, and
cross-backend tests assert it). The masked correlation here is FFT-based
(memory-safe and fast at production sizes); the native module holds the
direct-sum twin used to validate it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

NAME = "numpy"


def fill_polygon(grid: np.ndarray, poly: np.ndarray, ox: float, oy: float, res: float) -> None:
    """OR a polygon into a (H, W) uint8 grid of cell centers.

    Cell (r, c) is centered at (ox + c*res, oy + r*res). A center is set
    iff it is inside the polygon under the even-odd rule; centers exactly
    on an edge count as inside. Scanlines run along rows (fixed y).
    """
    h, w = grid.shape
    x1 = poly[:, 0]
    y1 = poly[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)

    r0 = max(0, int(np.floor((y1.min() - oy) / res)) - 1)
    r1 = min(h - 1, int(np.ceil((y1.max() - oy) / res)) + 1)
    c0 = max(0, int(np.floor((x1.min() - ox) / res)) - 1)
    c1 = min(w - 1, int(np.ceil((x1.max() - ox) / res)) + 1)
    if r0 > r1 or c0 > c1:
        return

    yc = oy + np.arange(r0, r1 + 1) * res  # (R,)
    xc = ox + np.arange(c0, c1 + 1) * res  # (Cw,)
    sub = grid[r0 : r1 + 1, c0 : c1 + 1]

    # Crossings of each edge with every scanline; half-open in y so shared
    # vertices count once. Horizontal edges never satisfy the condition.
    cond = ((y1[:, None] <= yc) & (yc < y2[:, None])) | (
        (y2[:, None] <= yc) & (yc < y1[:, None])
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = x1[:, None] + (yc[None, :] - y1[:, None]) * (x2 - x1)[:, None] / (
            y2 - y1
        )[:, None]
    cross = np.where(cond, cross, np.nan)
    cross.sort(axis=0)  # NaN sorts last; crossings per scanline are even

    n_edges = poly.shape[0]
    for k in range(0, n_edges - 1, 2):
        lo = cross[k][:, None]
        hi = cross[k + 1][:, None]
        inside = (xc[None, :] >= lo) & (xc[None, :] <= hi)
        np.bitwise_or(sub, inside.astype(np.uint8), out=sub)

    # Edges lying exactly on a scanline: every center on them is boundary.
    horiz = np.nonzero(y1 == y2)[0]
    for e in horiz:
        if x1[e] == x2[e]:
            continue
        rows = np.nonzero(yc == y1[e])[0]
        if rows.size == 0:
            continue
        lo = min(x1[e], x2[e])
        hi = max(x1[e], x2[e])
        span = ((xc >= lo) & (xc <= hi)).astype(np.uint8)
        for r in rows:
            np.bitwise_or(sub[r], span, out=sub[r])


def splat_volume(
    vol: np.ndarray,  # (S0, S1, K, C) accumulated feature * weight
    wgt: np.ndarray,  # (S0, S1, K) accumulated weight
    feat: np.ndarray,  # (Hf, Wf, C)
    hdist: np.ndarray,  # (Hf, Wf, K)
    mats: np.ndarray,  # (K, 3, 3) ground (x,y,1) -> depth * (u,v,1)
    ox: float,
    oy: float,
    res: float,
) -> None:
    """Accumulate one camera into the occupancy volume.

    Cell (r, c) at (ox + c*res, oy + r*res) is projected at every bin
    height; when the pixel lands inside the feature image with positive
    depth, the bilinearly sampled feature weighted by the sampled height
    likelihood is added in place.
    """
    s0, s1, k_bins, _ = vol.shape
    hf, wf = feat.shape[:2]
    xs = ox + np.arange(s1) * res
    ys = oy + np.arange(s0) * res
    xx = np.broadcast_to(xs[None, :], (s0, s1))
    yy = np.broadcast_to(ys[:, None], (s0, s1))

    for k in range(k_bins):
        m = mats[k]
        depth = m[2, 0] * xx + m[2, 1] * yy + m[2, 2]
        valid = depth > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (m[0, 0] * xx + m[0, 1] * yy + m[0, 2]) / depth
            v = (m[1, 0] * xx + m[1, 1] * yy + m[1, 2]) / depth
        valid &= (u >= 0.0) & (u <= wf - 1.0) & (v >= 0.0) & (v <= hf - 1.0)
        if not valid.any():
            continue
        rr, cc = np.nonzero(valid)
        uu = u[rr, cc]
        vv = v[rr, cc]
        u0 = np.minimum(np.floor(uu), wf - 2.0)
        v0 = np.minimum(np.floor(vv), hf - 2.0)
        fu = uu - u0
        fv = vv - v0
        iu = u0.astype(np.intp)
        iv = v0.astype(np.intp)
        w00 = (1.0 - fu) * (1.0 - fv)
        w01 = fu * (1.0 - fv)
        w10 = (1.0 - fu) * fv
        w11 = fu * fv
        wh = (
            w00 * hdist[iv, iu, k]
            + w01 * hdist[iv, iu + 1, k]
            + w10 * hdist[iv + 1, iu, k]
            + w11 * hdist[iv + 1, iu + 1, k]
        )
        pos = wh > 0.0
        if not pos.any():
            continue
        rr = rr[pos]
        cc = cc[pos]
        wh = wh[pos]
        f = (
            w00[pos, None] * feat[iv[pos], iu[pos], :]
            + w01[pos, None] * feat[iv[pos], iu[pos] + 1, :]
            + w10[pos, None] * feat[iv[pos] + 1, iu[pos], :]
            + w11[pos, None] * feat[iv[pos] + 1, iu[pos] + 1, :]
        )
        wgt[rr, cc, k] += wh
        vol[rr, cc, k, :] += f * wh[:, None]


def masked_corr(tile: np.ndarray, tmpl: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked cosine correlation over all valid offsets, via FFT.

    score(i, j) = <tmpl*mask, window(i,j)> / (||tmpl*mask|| * ||window*mask||)
    with windows of the (C, L0, L1) tile matching the (C, S0, S1) template.
    Offsets where either norm vanishes score 0.
    """
    mt = tmpl * mask
    den_t = math.sqrt(float(np.sum(mt * mt)))
    num = fftconvolve(tile, mt[:, ::-1, ::-1], mode="valid", axes=(1, 2)).sum(axis=0)
    energy = fftconvolve(np.sum(tile * tile, axis=0), mask[::-1, ::-1], mode="valid")
    den = den_t * np.sqrt(np.maximum(energy, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(den > 1e-12, num / den, 0.0)
    return np.clip(scores, -1.0, 1.0)

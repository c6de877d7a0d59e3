"""Compiled inner loops for the vision hot path."""

import numpy as np
from numba import njit


@njit(cache=True)
def sobel_nms(sm, lo2, hi2, tan_lo, tan_hi):
    """3x3 Sobel (replicated borders) and non-maximum suppression.

    Works on squared magnitudes. Returns 0 for suppressed pixels, 1 for weak
    and 2 for strong maxima. Each pixel is compared with its two neighbours
    along the quantized gradient direction; ties go to the neighbour on the
    darker side, which is invariant under mirroring.
    """
    h, w = sm.shape
    gx = np.empty((h, w), dtype=np.float64)
    gy = np.empty((h, w), dtype=np.float64)
    mag2 = np.empty((h, w), dtype=np.float64)
    for y in range(h):
        ym = max(y - 1, 0)
        yp = min(y + 1, h - 1)
        for x in range(w):
            xm = max(x - 1, 0)
            xp = min(x + 1, w - 1)
            a = sm[ym, xm]
            b = sm[ym, x]
            c = sm[ym, xp]
            d = sm[y, xm]
            f = sm[y, xp]
            g = sm[yp, xm]
            hv = sm[yp, x]
            i = sm[yp, xp]
            u = (c + 2.0 * f + i) - (a + 2.0 * d + g)
            v = (g + 2.0 * hv + i) - (a + 2.0 * b + c)
            gx[y, x] = u
            gy[y, x] = v
            mag2[y, x] = u * u + v * v
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            m = mag2[y, x]
            if m < lo2 or m <= 0.0:
                continue
            ax = abs(gx[y, x])
            ay = abs(gy[y, x])
            sx = 1 if gx[y, x] >= 0 else -1
            sy = 1 if gy[y, x] >= 0 else -1
            if ay <= tan_lo * ax:
                dx, dy = sx, 0
            elif ay > tan_hi * ax:
                dx, dy = 0, sy
            else:
                dx, dy = sx, sy
            xa = min(max(x + dx, 0), w - 1)
            ya = min(max(y + dy, 0), h - 1)
            xb = min(max(x - dx, 0), w - 1)
            yb = min(max(y - dy, 0), h - 1)
            if m > mag2[yb, xb] and m >= mag2[ya, xa]:
                out[y, x] = 2 if m >= hi2 else 1
    return out


@njit(cache=True)
def hysteresis(cls):
    """Keep weak pixels 8-connected to a strong one."""
    h, w = cls.shape
    keep = np.zeros((h, w), dtype=np.bool_)
    stack = np.empty(h * w, dtype=np.int64)
    top = 0
    for y in range(h):
        for x in range(w):
            if cls[y, x] == 2 and not keep[y, x]:
                keep[y, x] = True
                stack[top] = y * w + x
                top += 1
                while top > 0:
                    top -= 1
                    p = stack[top]
                    py = p // w
                    px = p - py * w
                    for yy in range(max(py - 1, 0), min(py + 2, h)):
                        for xx in range(max(px - 1, 0), min(px + 2, w)):
                            if cls[yy, xx] > 0 and not keep[yy, xx]:
                                keep[yy, xx] = True
                                stack[top] = yy * w + xx
                                top += 1
    return keep


@njit(cache=True)
def hough(px, py, cos, sin, rho_res, n_half, votes_min, min_len, max_gap, max_iter, tol):
    """Vote, then repeatedly extract runs along the strongest live cell.

    The accumulator is stored theta-major so consecutive points vote into
    nearby memory.
    """
    n = px.shape[0]
    nt = cos.shape[0]
    nr = 2 * n_half + 1
    acc = np.zeros((nt, nr), dtype=np.int32)
    ridx = np.empty((nt, n), dtype=np.int32)
    for t in range(nt):
        c = cos[t]
        s = sin[t]
        for i in range(n):
            r = np.int32(np.rint((px[i] * c + py[i] * s) / rho_res)) + n_half
            ridx[t, i] = r
            acc[t, r] += 1
    # unvoting only lowers counts, so cells below the threshold never return
    n_cand = 0
    for t in range(nt):
        for r in range(nr):
            if acc[t, r] >= votes_min:
                n_cand += 1
    cand_r = np.empty(n_cand, dtype=np.int64)
    cand_t = np.empty(n_cand, dtype=np.int64)
    k = 0
    for t in range(nt):
        for r in range(nr):
            if acc[t, r] >= votes_min:
                cand_r[k] = r
                cand_t[k] = t
                k += 1
    retired = np.zeros((nt, nr), dtype=np.bool_)
    alive = np.ones(n, dtype=np.bool_)
    segs = np.empty((max_iter * 4 + 16, 4), dtype=np.float64)
    n_segs = 0
    half_t = 0.5 * nt
    idx = np.empty(n, dtype=np.int64)
    tv = np.empty(n, dtype=np.float64)

    for _ in range(max_iter):
        # strongest live cell; ties prefer near-vertical lines, then small |rho|
        best = -1
        br, bt = -1, -1
        live = 0
        for c in range(n_cand):
            r = cand_r[c]
            t = cand_t[c]
            v = acc[t, r]
            if retired[t, r] or v < votes_min:
                continue
            cand_r[live] = r
            cand_t[live] = t
            live += 1
            if v < best:
                continue
            if v > best:
                best, br, bt = v, r, t
                continue
            tilt, btilt = abs(t - half_t), abs(bt - half_t)
            if tilt > btilt or (tilt == btilt and abs(r - n_half) < abs(br - n_half)):
                br, bt = r, t
        n_cand = live
        if best < 0:
            break
        rho = (br - n_half) * rho_res
        c = cos[bt]
        s = sin[bt]
        k = 0
        for i in range(n):
            if alive[i] and abs(px[i] * c + py[i] * s - rho) <= tol:
                idx[k] = i
                tv[k] = -px[i] * s + py[i] * c
                k += 1
        if k > 0:
            order = np.argsort(tv[:k], kind="mergesort")
            start = 0
            for j in range(1, k + 1):
                if j == k or tv[order[j]] - tv[order[j - 1]] > max_gap:
                    t0 = tv[order[start]]
                    t1 = tv[order[j - 1]]
                    if t1 - t0 >= min_len and n_segs < segs.shape[0]:
                        segs[n_segs, 0] = rho * c - t0 * s
                        segs[n_segs, 1] = rho * s + t0 * c
                        segs[n_segs, 2] = rho * c - t1 * s
                        segs[n_segs, 3] = rho * s + t1 * c
                        n_segs += 1
                        for q in range(start, j):
                            i = idx[order[q]]
                            alive[i] = False
                            for t in range(nt):
                                acc[t, ridx[t, i]] -= 1
                    start = j
        retired[bt, br] = True
    return segs[:n_segs]


@njit(cache=True)
def dbscan_expand(adj, core):
    """Grow clusters from core points in index order (breadth first)."""
    n = adj.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=np.bool_)
    queue = np.empty(n, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        head, tail = 0, 1
        queue[0] = i
        while head < tail:
            p = queue[head]
            head += 1
            for q in range(n):
                if not adj[p, q]:
                    continue
                if labels[q] == -1:
                    labels[q] = cluster
                if core[q] and not visited[q]:
                    visited[q] = True
                    queue[tail] = q
                    tail += 1
        cluster += 1
    return labels, cluster


@njit(cache=True)
def fill_convex(img, polys, values, keep, subtract):
    """Fill convex polygons given in float pixel coordinates.

    A pixel is covered when its center lies inside or on the boundary, a rule
    that is unchanged by mirroring. ``subtract`` darkens (saturating at 0)
    instead of painting; a pixel is darkened at most once per call.
    """
    h, w = img.shape
    n, m = polys.shape[0], polys.shape[1]
    hit = np.zeros((h, w), dtype=np.uint8) if subtract else np.zeros((1, 1), dtype=np.uint8)
    for i in range(n):
        if not keep[i]:
            continue
        area = 0.0
        for j in range(m):
            k = (j + 1) % m
            area += polys[i, j, 0] * polys[i, k, 1] - polys[i, k, 0] * polys[i, j, 1]
        if area == 0.0:
            continue
        vmin = polys[i, 0, 1]
        vmax = vmin
        for j in range(1, m):
            vmin = min(vmin, polys[i, j, 1])
            vmax = max(vmax, polys[i, j, 1])
        y0 = max(0, int(np.ceil(vmin)))
        y1 = min(h - 1, int(np.floor(vmax)))
        val = values[i]
        for y in range(y0, y1 + 1):
            # a convex polygon meets a row in one span; collect its ends
            lo = np.inf
            hi = -np.inf
            for j in range(m):
                k = (j + 1) % m
                ax = polys[i, j, 0]
                ay = polys[i, j, 1]
                bx = polys[i, k, 0]
                by = polys[i, k, 1]
                if (ay <= y <= by) or (by <= y <= ay):
                    if ay == by:
                        lo = min(lo, ax, bx)
                        hi = max(hi, ax, bx)
                    else:
                        xc = ax + (bx - ax) * ((y - ay) / (by - ay))
                        lo = min(lo, xc)
                        hi = max(hi, xc)
            if hi < lo:
                continue
            x0 = max(0, int(np.ceil(lo)))
            x1 = min(w - 1, int(np.floor(hi)))
            for x in range(x0, x1 + 1):
                if subtract:
                    if hit[y, x] == 0:
                        hit[y, x] = 1
                        img[y, x] = max(0, img[y, x] - val)
                else:
                    img[y, x] = val

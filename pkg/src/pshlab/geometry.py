"""Planar geometry plumbing shared by the boundary-extraction and
mass/moment operations: marching-squares level curves with sub-grid
linear interpolation, segment chaining into ordered closed polylines,
Sutherland-Hodgman clipping of a polygon against grid cells, shoelace
areas/centroids, and an even-odd point-in-polygon test.
"""

from __future__ import annotations

import numpy as np


def marching_squares(values: np.ndarray, level: float, x_axis, y_axis):
    """Segments of the `values = level` curve, sub-grid linear interpolation.

    values[i, j] is the sample at (x_axis[i], y_axis[j]).  Cells containing
    non-finite corners are skipped.  Returns an (n_seg, 2, 2) array.
    """
    v = values - level
    segs = []
    nx, ny = v.shape
    xa = np.asarray(x_axis)
    ya = np.asarray(y_axis)

    finite = np.isfinite(v)
    cell_ok = finite[:-1, :-1] & finite[1:, :-1] & finite[1:, 1:] & finite[:-1, 1:]
    neg = v < 0
    idx = np.nonzero(cell_ok & ~((neg[:-1, :-1] == neg[1:, :-1])
                                 & (neg[1:, :-1] == neg[1:, 1:])
                                 & (neg[1:, 1:] == neg[:-1, 1:])))

    def interp(p1, p2, f1, f2):
        # clamp off the cell corners: fields that are exactly level-valued
        # on one side otherwise put crossings from distinct edges at the
        # same node, which scrambles the segment chaining
        t = min(max(f1 / (f1 - f2), 1e-3), 1.0 - 1e-3)
        return (p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1]))

    for i, j in zip(*idx):
        corners = [(xa[i], ya[j]), (xa[i + 1], ya[j]),
                   (xa[i + 1], ya[j + 1]), (xa[i], ya[j + 1])]
        fvals = [v[i, j], v[i + 1, j], v[i + 1, j + 1], v[i, j + 1]]
        pts = []
        for k in range(4):
            f1, f2 = fvals[k], fvals[(k + 1) % 4]
            if (f1 < 0) != (f2 < 0):
                pts.append(interp(corners[k], corners[(k + 1) % 4], f1, f2))
        if len(pts) == 2:
            segs.append((pts[0], pts[1]))
        elif len(pts) == 4:
            # saddle cell: split by the cell-centre sign
            centre = 0.25 * sum(fvals)
            if (centre < 0) == (fvals[0] < 0):
                segs.append((pts[0], pts[3]))
                segs.append((pts[1], pts[2]))
            else:
                segs.append((pts[0], pts[1]))
                segs.append((pts[2], pts[3]))
    if not segs:
        return np.zeros((0, 2, 2))
    return np.asarray(segs)


def chain_segments(segments: np.ndarray, tol: float) -> list:
    """Chain unordered segments into polylines by endpoint matching.

    Returns a list of (k, 2) vertex arrays; closed loops repeat no vertex
    (closure is implicit).  Greedy matching with tolerance `tol`.
    """
    if len(segments) == 0:
        return []
    segs = [(tuple(s[0]), tuple(s[1])) for s in segments]
    unused = set(range(len(segs)))

    def close(p, q):
        return abs(p[0] - q[0]) <= tol and abs(p[1] - q[1]) <= tol

    polylines = []
    while unused:
        i = unused.pop()
        chain = [segs[i][0], segs[i][1]]
        extended = True
        while extended:
            extended = False
            for j in list(unused):
                a, b = segs[j]
                if close(chain[-1], a):
                    chain.append(b)
                elif close(chain[-1], b):
                    chain.append(a)
                elif close(chain[0], a):
                    chain.insert(0, b)
                elif close(chain[0], b):
                    chain.insert(0, a)
                else:
                    continue
                unused.discard(j)
                extended = True
        if close(chain[0], chain[-1]) and len(chain) > 2:
            chain = chain[:-1]
        polylines.append(np.asarray(chain))
    return polylines


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def polygon_centroid(poly: np.ndarray):
    a = polygon_area(poly)
    if abs(a) < 1e-300:
        return tuple(np.mean(poly, axis=0))
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    cx = float(np.sum((x + xn) * cross) / (6.0 * a))
    cy = float(np.sum((y + yn) * cross) / (6.0 * a))
    return cx, cy


def ensure_ccw(poly: np.ndarray) -> np.ndarray:
    return poly if polygon_area(poly) >= 0 else poly[::-1].copy()


def clip_polygon_to_rect(poly: np.ndarray, x0, x1, y0, y1) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned box."""
    def clip_half(pts, inside, intersect):
        if len(pts) == 0:
            return pts
        out = []
        prev = pts[-1]
        prev_in = inside(prev)
        for cur in pts:
            cur_in = inside(cur)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
            prev, prev_in = cur, cur_in
        return out

    def x_cut(c, keep_low):
        def inside(p):
            return p[0] <= c if keep_low else p[0] >= c
        def intersect(p, q):
            t = (c - p[0]) / (q[0] - p[0])
            return (c, p[1] + t * (q[1] - p[1]))
        return inside, intersect

    def y_cut(c, keep_low):
        def inside(p):
            return p[1] <= c if keep_low else p[1] >= c
        def intersect(p, q):
            t = (c - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), c)
        return inside, intersect

    pts = [tuple(p) for p in poly]
    for inside, intersect in (x_cut(x1, True), x_cut(x0, False),
                              y_cut(y1, True), y_cut(y0, False)):
        pts = clip_half(pts, inside, intersect)
        if not pts:
            return np.zeros((0, 2))
    return np.asarray(pts)


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized even-odd (ray casting) inclusion test."""
    x = np.asarray(px, dtype=float).ravel()
    y = np.asarray(py, dtype=float).ravel()
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    xs, ys = poly[:, 0], poly[:, 1]
    for k in range(n):
        x1, y1 = xs[k], ys[k]
        x2, y2 = xs[(k + 1) % n], ys[(k + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        if not crosses.any():
            continue
        xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
    return inside.reshape(np.asarray(px).shape)


def polyline_is_simple(poly: np.ndarray, tol: float = 0.0) -> bool:
    """True when no two non-adjacent edges of the closed polyline intersect."""
    n = len(poly)
    if n < 4:
        return True
    p = np.asarray(poly, dtype=float)
    a = p
    b = np.roll(p, -1, axis=0)

    def orient(o, q, r):
        return ((q[..., 0] - o[..., 0]) * (r[..., 1] - o[..., 1])
                - (q[..., 1] - o[..., 1]) * (r[..., 0] - o[..., 0]))

    for i in range(n):
        js = np.arange(n)
        # skip self and the two adjacent edges
        ok = (js != i) & (js != (i - 1) % n) & (js != (i + 1) % n)
        js = js[ok]
        o1 = orient(a[i][None, :], b[i][None, :], a[js])
        o2 = orient(a[i][None, :], b[i][None, :], b[js])
        o3 = orient(a[js], b[js], np.broadcast_to(a[i], (len(js), 2)))
        o4 = orient(a[js], b[js], np.broadcast_to(b[i], (len(js), 2)))
        hit = (np.sign(o1) != np.sign(o2)) & (np.sign(o3) != np.sign(o4)) \
            & (np.abs(o1) > tol) & (np.abs(o2) > tol) \
            & (np.abs(o3) > tol) & (np.abs(o4) > tol)
        if hit.any():
            return False
    return True


def resample_closed(poly: np.ndarray, k: int) -> np.ndarray:
    """Arclength-uniform resampling of a closed polyline to k vertices."""
    p = np.asarray(poly, dtype=float)
    closed = np.vstack([p, p[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    targets = np.linspace(0.0, total, k, endpoint=False)
    out = np.empty((k, 2))
    for d in range(2):
        out[:, d] = np.interp(targets, s, closed[:, d])
    return out

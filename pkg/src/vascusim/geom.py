"""Small geometry helpers shared across the simulator.

Everything works on plain numpy arrays in millimetres.  Polylines are
(N, 3) arrays of ordered points.
"""

from __future__ import annotations

import numpy as np


def polyline_arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points: np.ndarray, step: float) -> np.ndarray:
    """Resample a polyline at roughly uniform ``step`` spacing.

    Original vertices are not preserved exactly (except the endpoints);
    the resampled curve lies on the original segments.
    """
    s = polyline_arclength(points)
    total = s[-1]
    if total <= 0.0:
        return points.copy()
    n = max(2, int(np.ceil(total / step)) + 1)
    si = np.linspace(0.0, total, n)
    out = np.empty((n, points.shape[1]))
    for k in range(points.shape[1]):
        out[:, k] = np.interp(si, s, points[:, k])
    return out


def point_to_polyline(p: np.ndarray, points: np.ndarray):
    """Distance from point ``p`` to a polyline.

    Returns ``(dist, closest_point, arc_s)`` where ``arc_s`` is the arc
    length coordinate of the closest point along the polyline.
    """
    a = points[:-1]
    b = points[1:]
    ab = b - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    ab2 = np.where(ab2 == 0.0, 1.0, ab2)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / ab2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.linalg.norm(proj - p[None, :], axis=1)
    i = int(np.argmin(d))
    s = polyline_arclength(points)
    seg_len = np.linalg.norm(b[i] - a[i])
    return float(d[i]), proj[i], float(s[i] + t[i] * seg_len)


def points_to_polyline_distance(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized distance from many points (M, 3) to a polyline (N, 3)."""
    best = np.full(pts.shape[0], np.inf)
    for i in range(poly.shape[0] - 1):
        a = poly[i]
        ab = poly[i + 1] - a
        ab2 = float(ab @ ab)
        if ab2 == 0.0:
            d = np.linalg.norm(pts - a, axis=1)
        else:
            t = np.clip((pts - a) @ ab / ab2, 0.0, 1.0)
            proj = a[None, :] + t[:, None] * ab[None, :]
            d = np.linalg.norm(pts - proj, axis=1)
        np.minimum(best, d, out=best)
    return best


def ray_tube_entry(origin: np.ndarray, direction: np.ndarray, poly: np.ndarray,
                   radius: float):
    """First ray parameter t >= 0 at which the ray touches the tube surface.

    The tube is the set of points within ``radius`` of the polyline.  Uses
    the infinite-cylinder quadratic per segment with the hit point required
    to project inside the segment.  Returns None when the ray misses.
    """
    d = direction / np.linalg.norm(direction)
    best = None
    for i in range(poly.shape[0] - 1):
        a = poly[i]
        u = poly[i + 1] - a
        seg_len = np.linalg.norm(u)
        if seg_len == 0.0:
            continue
        u = u / seg_len
        oa = origin - a
        dp = d - (d @ u) * u
        op = oa - (oa @ u) * u
        A = dp @ dp
        B = 2.0 * (dp @ op)
        C = op @ op - radius * radius
        if A < 1e-14:
            continue  # ray parallel to segment axis
        disc = B * B - 4.0 * A * C
        if disc < 0.0:
            continue
        sq = np.sqrt(disc)
        for t in ((-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)):
            if t < 0.0:
                continue
            hit = origin + t * d
            proj = (hit - a) @ u
            if -1e-9 <= proj <= seg_len + 1e-9:
                if best is None or t < best:
                    best = t
                break  # entry is the smaller root for this segment
    return best


def clip_polygon_rect(poly: np.ndarray, x0: float, y0: float, x1: float,
                      y1: float) -> np.ndarray:
    """Sutherland-Hodgman clip of polygon (N, 2) against an axis rectangle."""

    def clip_edge(pts, inside, intersect):
        out = []
        n = len(pts)
        for i in range(n):
            cur, nxt = pts[i], pts[(i + 1) % n]
            cin, nin = inside(cur), inside(nxt)
            if cin:
                out.append(cur)
                if not nin:
                    out.append(intersect(cur, nxt))
            elif nin:
                out.append(intersect(cur, nxt))
        return out

    def x_cut(x):
        def isect(p, q):
            t = (x - p[0]) / (q[0] - p[0])
            return (x, p[1] + t * (q[1] - p[1]))
        return isect

    def y_cut(y):
        def isect(p, q):
            t = (y - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), y)
        return isect

    pts = [tuple(p) for p in poly]
    edges = [
        (lambda p: p[0] >= x0, x_cut(x0)),
        (lambda p: p[0] <= x1, x_cut(x1)),
        (lambda p: p[1] >= y0, y_cut(y0)),
        (lambda p: p[1] <= y1, y_cut(y1)),
    ]
    for inside, isect in edges:
        if not pts:
            break
        pts = clip_edge(pts, inside, isect)
    return np.asarray(pts, dtype=float).reshape(-1, 2)

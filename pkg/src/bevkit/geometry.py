"""Planar geometry primitives: angles, polylines, polygons.

Coordinates are meters in a local scene frame. Polygons are open vertex
lists (the closing edge last->first is implicit) and CCW means positive
signed area. Point containment counts the boundary as inside, with a small
metric tolerance so that 6-decimal file rounding never flips membership.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DegenerateInput

TWO_PI = 2.0 * math.pi
ON_EDGE_TOL = 1e-7  # meters


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = (theta + math.pi) % TWO_PI - math.pi
    if r == -math.pi:
        return math.pi
    return r


def angle_diff(a: float, b: float) -> float:
    """Shortest-arc difference a - b, in (-pi, pi]."""
    return wrap_angle(a - b)


def net_angle_change(angles: Sequence[float]) -> float:
    """Unwrapped end-minus-start change: sum of shortest-arc steps."""
    total = 0.0
    for prev, cur in zip(angles, angles[1:]):
        total += angle_diff(cur, prev)
    return total


def as_xy(points) -> np.ndarray:
    """Coerce a point sequence (ndarray, (x, y) pairs, or .x/.y objects) to (N, 2)."""
    if isinstance(points, np.ndarray):
        pts = np.asarray(points, dtype=float)
    else:
        seq = list(points)
        if seq and hasattr(seq[0], "x"):
            pts = np.array([(p.x, p.y) for p in seq], dtype=float)
        else:
            pts = np.asarray(seq, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegenerateInput(f"expected (N, 2) points, got shape {pts.shape}")
    return pts


# ---------------------------------------------------------------------------
# polylines


def polyline_cumlen(pts: np.ndarray) -> np.ndarray:
    """Cumulative arclength from the first vertex, shape (K,)."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_length(points) -> float:
    return float(polyline_cumlen(as_xy(points))[-1])


def resample_polyline_xy(points, n_points: int) -> np.ndarray:
    """Resample to n_points equally spaced by arclength; endpoints are kept exactly."""
    if n_points < 2:
        raise DegenerateInput(f"n_points must be >= 2, got {n_points}")
    pts = as_xy(points)
    if len(pts) < 2:
        raise DegenerateInput("polyline needs at least 2 points")
    cum = polyline_cumlen(pts)
    total = float(cum[-1])
    if total <= 0.0:
        raise DegenerateInput("polyline has zero arclength")
    # drop zero-length segments so interpolation abscissae are strictly increasing
    keep = np.concatenate([[True], np.diff(cum) > 0.0])
    dedup, cum_kept = pts[keep], cum[keep]
    s = np.linspace(0.0, total, n_points)
    out = np.column_stack([np.interp(s, cum_kept, dedup[:, 0]), np.interp(s, cum_kept, dedup[:, 1])])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def point_at_arclength(pts: np.ndarray, cum: np.ndarray, s: float) -> tuple[np.ndarray, float]:
    """Point and tangent angle at arclength s (clamped to [0, total])."""
    s = min(max(float(s), 0.0), float(cum[-1]))
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(pts) - 2)
    seg = pts[i + 1] - pts[i]
    seg_len = float(cum[i + 1] - cum[i])
    t = 0.0 if seg_len <= 0.0 else (s - float(cum[i])) / seg_len
    return pts[i] + t * seg, math.atan2(seg[1], seg[0])


def project_to_polyline(pts: np.ndarray, cum: np.ndarray, p: np.ndarray) -> tuple[float, float, float]:
    """Closest point on the polyline: (arclength, distance, tangent angle there)."""
    a = pts[:-1]
    d = pts[1:] - a
    len2 = np.einsum("ij,ij->i", d, d)
    safe = np.where(len2 <= 0.0, 1.0, len2)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / safe, 0.0, 1.0)
    t = np.where(len2 <= 0.0, 0.0, t)
    proj = a + t[:, None] * d
    diff = p - proj
    dist2 = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(dist2))
    s = float(cum[i]) + float(t[i]) * float(cum[i + 1] - cum[i])
    return s, float(math.sqrt(dist2[i])), math.atan2(d[i, 1], d[i, 0])


def rotate_points(points, angle: float, center=(0.0, 0.0)) -> np.ndarray:
    pts = as_xy(points)
    c, s = math.cos(angle), math.sin(angle)
    rel = pts - np.asarray(center, dtype=float)
    return np.column_stack(
        [rel[:, 0] * c - rel[:, 1] * s, rel[:, 0] * s + rel[:, 1] * c]
    ) + np.asarray(center, dtype=float)


# ---------------------------------------------------------------------------
# polygons


def signed_area(points) -> float:
    pts = as_xy(points)
    x, y = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum(x * y2 - x2 * y))


def is_ccw(points) -> bool:
    return signed_area(points) > 0.0


def ensure_ccw(points) -> np.ndarray:
    pts = as_xy(points)
    return pts if signed_area(pts) > 0.0 else pts[::-1].copy()


def polygon_is_simple(points) -> bool:
    """True when no two non-adjacent edges properly cross."""
    pts = as_xy(points)
    n = len(pts)
    if n < 3:
        return False
    a0 = pts
    a1 = np.roll(pts, -1, axis=0)
    # pairwise orientation tests, broadcast (n, n)
    d = a1 - a0

    def cross_to(b):
        # cross of each edge direction with (b - edge start), b shape (n, 2)
        return d[:, None, 0] * (b[None, :, 1] - a0[:, None, 1]) - d[:, None, 1] * (
            b[None, :, 0] - a0[:, None, 0]
        )

    d1 = cross_to(a0)  # edge i vs start of edge j
    d2 = cross_to(a1)  # edge i vs end of edge j
    proper = ((d1 > 0) != (d2 > 0)) & ((d1.T > 0) != (d2.T > 0))
    idx = np.arange(n)
    adjacent = (np.abs(idx[:, None] - idx[None, :]) <= 1) | (
        np.abs(idx[:, None] - idx[None, :]) == n - 1
    )
    return not bool(np.any(proper & ~adjacent))


def _dist2_to_edges(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Squared distance of each point to each polygon edge, shape (M, K)."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    d = b - a  # (K, 2)
    len2 = np.einsum("ij,ij->i", d, d)
    safe = np.where(len2 <= 0.0, 1.0, len2)
    rel = points[:, None, :] - a[None, :, :]  # (M, K, 2)
    t = np.clip(np.einsum("mkj,kj->mk", rel, d) / safe[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * d[None, :, :]
    diff = points[:, None, :] - proj
    return np.einsum("mkj,mkj->mk", diff, diff)


def points_in_polygon(points, poly, include_boundary: bool = True, tol: float = ON_EDGE_TOL) -> np.ndarray:
    """Even-odd membership test for many points, boundary-inclusive by default."""
    P = as_xy(points)
    V = as_xy(poly)
    x = P[:, 0][:, None]
    y = P[:, 1][:, None]
    x1 = V[:, 0][None, :]
    y1 = V[:, 1][None, :]
    x2 = np.roll(V[:, 0], -1)[None, :]
    y2 = np.roll(V[:, 1], -1)[None, :]
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    inside = (np.sum(crosses & (x < x_int), axis=1) % 2).astype(bool)
    if include_boundary:
        on_edge = np.min(_dist2_to_edges(P, V), axis=1) <= tol * tol
        inside = inside | on_edge
    return inside


def point_in_polygon(point, poly, include_boundary: bool = True) -> bool:
    return bool(points_in_polygon(np.asarray([point], dtype=float), poly, include_boundary)[0])


def polygon_bbox(points) -> tuple[float, float, float, float]:
    pts = as_xy(points)
    return (
        float(pts[:, 0].min()),
        float(pts[:, 1].min()),
        float(pts[:, 0].max()),
        float(pts[:, 1].max()),
    )


def polygons_intersect(poly_a, poly_b) -> bool:
    """True when the closed regions share at least one point."""
    A = as_xy(poly_a)
    B = as_xy(poly_b)
    if np.any(points_in_polygon(A, B)) or np.any(points_in_polygon(B, A)):
        return True
    # proper edge crossings
    a0, a1 = A, np.roll(A, -1, axis=0)
    b0, b1 = B, np.roll(B, -1, axis=0)
    da = a1 - a0
    db = b1 - b0

    def cross_pairs(d, o, q):
        return d[:, None, 0] * (q[None, :, 1] - o[:, None, 1]) - d[:, None, 1] * (
            q[None, :, 0] - o[:, None, 0]
        )

    d1 = cross_pairs(da, a0, b0)
    d2 = cross_pairs(da, a0, b1)
    d3 = cross_pairs(db, b0, a0)
    d4 = cross_pairs(db, b0, a1)
    proper = ((d1 > 0) != (d2 > 0)) & ((d3.T > 0) != (d4.T > 0))
    return bool(np.any(proper))


def clip_polygon_to_box(points, xmin: float, ymin: float, xmax: float, ymax: float) -> np.ndarray:
    """Sutherland-Hodgman clip against an axis-aligned box; may return < 3 points."""
    pts = [tuple(p) for p in as_xy(points)]

    def clip_edge(poly, inside, intersect):
        out = []
        for i, cur in enumerate(poly):
            prev = poly[i - 1]
            cur_in, prev_in = inside(cur), inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
        return out

    def x_cut(bound):
        def f(p, q):
            t = (bound - p[0]) / (q[0] - p[0])
            return (bound, p[1] + t * (q[1] - p[1]))

        return f

    def y_cut(bound):
        def f(p, q):
            t = (bound - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), bound)

        return f

    for inside, cut in (
        (lambda p: p[0] >= xmin, x_cut(xmin)),
        (lambda p: p[0] <= xmax, x_cut(xmax)),
        (lambda p: p[1] >= ymin, y_cut(ymin)),
        (lambda p: p[1] <= ymax, y_cut(ymax)),
    ):
        pts = clip_edge(pts, inside, cut)
        if not pts:
            break
    return np.asarray(pts, dtype=float).reshape(-1, 2)

"""Slow reference implementations the fast code paths are checked against.

Nothing here imports the package's algorithms: each oracle recomputes its
answer from first principles (exact rational geometry, dense time stepping,
per-event interval scans, finite differences).
"""

from __future__ import annotations

from fractions import Fraction
from itertools import product

import numpy as np


# --- event simulation ------------------------------------------------------------


def dense_crossings(levels, times, C: float, substeps: int):
    """Threshold crossings of a piecewise-linear signal found by dense time stepping.

    The signal passes through ``levels[k]`` at ``times[k]``; the reference
    starts at ``levels[0]`` and moves by ``C`` per event.  Every gap is cut into
    ``substeps`` steps and an event is stamped with the end of the first step
    at which its level was reached.  Returns ``(times, polarities)``.
    """
    out_t, out_p = [], []
    ref = levels[0]
    for k in range(len(levels) - 1):
        l0, l1, t0, t1 = levels[k], levels[k + 1], times[k], times[k + 1]
        dt = (t1 - t0) / substeps
        for i in range(1, substeps + 1):
            level = l0 + (l1 - l0) * i / substeps
            while level - ref >= C - 1e-12:
                ref += C
                out_t.append(t0 + i * dt)
                out_p.append(1)
            while ref - level >= C - 1e-12:
                ref -= C
                out_t.append(t0 + i * dt)
                out_p.append(-1)
    return np.array(out_t), np.array(out_p)


def monotone_crossings_per_us(levels, times, C: float):
    """Event times of one monotone piecewise-linear signal on a 1 us grid.

    The signal is sampled at every integer microsecond after ``times[0]``; the
    n-th event is stamped at the first sample whose distance from the start
    level reaches ``n * C``.  For a monotone signal this is what stepping a
    reference level through time produces, so the result is the
    dense-time answer at one-microsecond resolution.
    """
    levels = np.asarray(levels, dtype=np.float64)
    grid = np.arange(int(times[0]) + 1, int(times[-1]) + 1)
    disp = np.abs(np.interp(grid, times, levels) - levels[0])
    n = int(np.floor(abs(levels[-1] - levels[0]) / C + 1e-9))
    idx = np.searchsorted(disp, C * np.arange(1, n + 1) - 1e-12, side="left")
    return grid[idx]


# --- windows -----------------------------------------------------------------------


def windows_by_scan(times, t_begin: int, length: int, stride: int, n_windows: int):
    """Indices of the events inside each window, by testing every event against every window."""
    out = []
    for k in range(n_windows):
        s = t_begin + k * stride
        out.append([i for i, t in enumerate(times) if s <= t < s + length])
    return out


# --- exact triangle intersection ---------------------------------------------------


def _q(p):
    return tuple(Fraction(float(c)) for c in p)


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _orient3d(a, b, c, d):
    return _dot(_cross(_sub(b, a), _sub(c, a)), _sub(d, a))


def _sign(x):
    return (x > 0) - (x < 0)


def _orient2d(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment2d(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _segments_meet2d(p, q, a, b):
    d1, d2 = _sign(_orient2d(a, b, p)), _sign(_orient2d(a, b, q))
    d3, d4 = _sign(_orient2d(p, q, a)), _sign(_orient2d(p, q, b))
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True
    return ((d1 == 0 and _on_segment2d(a, b, p)) or (d2 == 0 and _on_segment2d(a, b, q))
            or (d3 == 0 and _on_segment2d(p, q, a)) or (d4 == 0 and _on_segment2d(p, q, b)))


def _point_in_triangle2d(p, a, b, c):
    s = [_sign(_orient2d(a, b, p)), _sign(_orient2d(b, c, p)), _sign(_orient2d(c, a, p))]
    return not (min(s) < 0 < max(s))


def _drop_axis(normal):
    return max(range(3), key=lambda i: abs(normal[i]))


def _segment_triangle_coplanar(p, q, tri, normal):
    k = _drop_axis(normal)
    keep = [i for i in range(3) if i != k]

    def proj(v):
        return (v[keep[0]], v[keep[1]])

    p2, q2 = proj(p), proj(q)
    a, b, c = (proj(v) for v in tri)
    if _point_in_triangle2d(p2, a, b, c) or _point_in_triangle2d(q2, a, b, c):
        return True
    return any(_segments_meet2d(p2, q2, u, v) for u, v in ((a, b), (b, c), (c, a)))


def _segment_hits_triangle(p, q, tri):
    a, b, c = tri
    normal = _cross(_sub(b, a), _sub(c, a))
    op, oq = _sign(_orient3d(a, b, c, p)), _sign(_orient3d(a, b, c, q))
    if op == 0 and oq == 0:
        return _segment_triangle_coplanar(p, q, tri, normal)
    if op * oq > 0:
        return False
    # the segment meets the plane; the meeting point is inside the triangle iff
    # the line through p, q passes on the same side of all three edges
    s = [_sign(_orient3d(p, q, a, b)), _sign(_orient3d(p, q, b, c)), _sign(_orient3d(p, q, c, a))]
    return not (min(s) < 0 < max(s))


def triangles_intersect_exact(t1, t2) -> bool:
    """Closed-set intersection of two non-degenerate triangles in exact arithmetic.

    Two triangles meet iff an edge of one meets the other triangle.
    """
    A = [_q(v) for v in np.asarray(t1, dtype=np.float64)]
    B = [_q(v) for v in np.asarray(t2, dtype=np.float64)]
    for P, Q in ((A, B), (B, A)):
        for i in range(3):
            if _segment_hits_triangle(P[i], P[(i + 1) % 3], Q):
                return True
    return False


def brute_force_pairs(tris_a, tris_b=None):
    """Every intersecting pair by testing all pairs (i < j when ``tris_b`` is None).

    A cheap box rejection runs first; it is exact because it only skips pairs
    whose closed bounding boxes are disjoint.
    """
    ta = np.asarray(tris_a, dtype=np.float64)
    tb = ta if tris_b is None else np.asarray(tris_b, dtype=np.float64)
    lo_a, hi_a = ta.min(1), ta.max(1)
    lo_b, hi_b = tb.min(1), tb.max(1)
    out = set()
    for i, j in product(range(len(ta)), range(len(tb))):
        if tris_b is None and j <= i:
            continue
        if np.any(lo_a[i] > hi_b[j]) or np.any(lo_b[j] > hi_a[i]):
            continue
        if triangles_intersect_exact(ta[i], tb[j]):
            out.add((i, j))
    return out


# --- finite differences --------------------------------------------------------------


def central_gradient(f, x: np.ndarray, coords, h: float = 1e-5, kink_tol: float = 1e-2):
    """Central differences of scalar ``f`` at ``x`` along the flat indices ``coords``.

    Returns ``(grad, kink)`` where ``kink[k]`` marks coordinates whose left and
    right one-sided slopes disagree by more than ``kink_tol`` (relative), i.e.
    where a non-differentiable point lies within one step.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    f0 = f(x)
    grad = np.zeros(len(coords))
    kink = np.zeros(len(coords), dtype=bool)
    for k, i in enumerate(coords):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        right, left = (fp - f0) / h, (f0 - fm) / h
        grad[k] = (fp - fm) / (2 * h)
        kink[k] = abs(right - left) > kink_tol * max(1.0, abs(right), abs(left))
    return grad, kink

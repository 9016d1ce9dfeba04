"""Independent reference implementations used to cross-check the library.

Everything here is deliberately naive: plain Python loops, exact or
high-precision arithmetic where it is cheap, no shared code with polyforge.
"""
from __future__ import annotations

import math
from fractions import Fraction

import mpmath
import numpy as np
import shapely


# -- geometry -----------------------------------------------------------------


def perp_distance(p, a, b) -> float:
    (px, py), (ax, ay), (bx, by) = p, a, b
    dx, dy = bx - ax, by - ay
    base = math.sqrt(dx * dx + dy * dy)
    if base == 0:
        return math.sqrt((px - ax) ** 2 + (py - ay) ** 2)
    return abs(dx * (py - ay) - dy * (px - ax)) / base


def naive_dp(points, eps) -> list[int]:
    """Textbook recursive Douglas-Peucker returning kept indices."""
    pts = [tuple(map(float, p)) for p in points]

    def rec(i, j):
        best, best_k = -1.0, None
        for k in range(i + 1, j):
            d = perp_distance(pts[k], pts[i], pts[j])
            if d > best:
                best, best_k = d, k
        if best_k is None or not best > eps:
            return [i]
        return rec(i, best_k) + rec(best_k, j)

    return rec(0, len(pts) - 1) + [len(pts) - 1]


def _orient(a, b, c):
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _on_segment(p, a, b) -> bool:
    return (
        _orient(a, b, p) == 0
        and min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    )


def segments_touch(a, b, c, d) -> bool:
    o1, o2, o3, o4 = _orient(a, b, c), _orient(a, b, d), _orient(c, d, a), _orient(c, d, b)
    if o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4):
        return True
    return _on_segment(c, a, b) or _on_segment(d, a, b) or _on_segment(a, c, d) or _on_segment(b, c, d)


def brute_is_simple(points) -> bool:
    """All-pairs edge test on exact (integer or Fraction) coordinates."""
    pts = [tuple(Fraction(int(v)) if float(v).is_integer() else Fraction(float(v)) for v in p) for p in points]
    n = len(pts)
    if n < 3:
        return False
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            a, b = edges[i]
            c, d = edges[j]
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent: shared vertex only; fail if the far end of one lies on the other
                far_i, far_j = (a, d) if j == i + 1 else (b, c)
                if _on_segment(far_j, *edges[i]) or _on_segment(far_i, *edges[j]):
                    return False
                continue
            if segments_touch(a, b, c, d):
                return False
    return True


def monte_carlo_area(points, samples: int = 1_000_000, seed: int = 0) -> float:
    pts = np.asarray(points, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    rng = np.random.default_rng(seed)
    q = rng.uniform(lo, hi, size=(samples, 2))
    inside = shapely.contains_xy(shapely.Polygon(pts), q[:, 0], q[:, 1])
    return float(inside.mean() * np.prod(hi - lo))


def point_segment_distance(p, a, b) -> float:
    (px, py), (ax, ay), (bx, by) = p, a, b
    dx, dy = bx - ax, by - ay
    l2 = dx * dx + dy * dy
    if l2 == 0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / l2))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def brute_polis(rings_a, rings_b) -> float:
    """PoLiS from lists of rings (each a list of (x, y))."""

    def segs(rings):
        return [(r[i], r[(i + 1) % len(r)]) for r in rings for i in range(len(r))]

    def one_way(verts, segments):
        return sum(min(point_segment_distance(v, a, b) for a, b in segments) for v in verts) / len(verts)

    va = [v for r in rings_a for v in r]
    vb = [v for r in rings_b for v in r]
    return 0.5 * one_way(va, segs(rings_b)) + 0.5 * one_way(vb, segs(rings_a))


# -- metrics ------------------------------------------------------------------


def fraction_c_iou(iou, n_gt, n_pred) -> Fraction:
    return Fraction(iou) * (1 - Fraction(abs(n_gt - n_pred), n_gt + n_pred))


def mp_simplicity_factor(n, k, thresholds, dps: int = 50) -> float:
    with mpmath.workdps(dps):
        k, n = mpmath.mpf(k), mpmath.mpf(n)
        total = mpmath.mpf(0)
        for t in thresholds:
            t = mpmath.mpf(t)
            total += (1 + mpmath.e ** (k * (3 - t))) / (1 + mpmath.e ** (k * (n - t)))
        return float(total / 3)


def count_turns(rings, theta_turn) -> int:
    out = 0
    for r in rings:
        n = len(r)
        for i in range(n):
            ax, ay = r[i - 1]
            bx, by = r[i]
            cx, cy = r[(i + 1) % n]
            u, w = (ax - bx, ay - by), (cx - bx, cy - by)
            cosang = (u[0] * w[0] + u[1] * w[1]) / (math.hypot(*u) * math.hypot(*w))
            theta = math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
            if 180.0 - theta > theta_turn:
                out += 1
    return out


# -- vertices ---------------------------------------------------------------------


def brute_nms(h, threshold, window) -> set[tuple[int, int]]:
    """Row-major tie-breaking local maxima, one pixel at a time; returns (x, y)."""
    rows, cols = h.shape
    half = window // 2
    out = set()
    for r in range(rows):
        for c in range(cols):
            v = h[r, c]
            if v < threshold:
                continue
            ok = True
            for rr in range(max(0, r - half), min(rows, r + half + 1)):
                for cc in range(max(0, c - half), min(cols, c + half + 1)):
                    if (rr, cc) == (r, c):
                        continue
                    earlier = (rr, cc) < (r, c)
                    if (earlier and not v > h[rr, cc]) or (not earlier and h[rr, cc] > v):
                        ok = False
            if ok:
                out.add((c, r))
    return out


def best_matching(pred, truth, radius) -> tuple[int, float]:
    """Exhaustive maximum-cardinality, then minimum-distance, one-to-one matching.

    Bitmask dynamic programme over truth subsets; fine up to ~12 points.
    """
    m = len(truth)
    dist = [[math.dist(p, t) for t in truth] for p in pred]
    memo: dict[tuple[int, int], tuple[int, float]] = {}

    def go(i, used):
        if i == len(pred):
            return 0, 0.0
        key = (i, used)
        if key in memo:
            return memo[key]
        best = go(i + 1, used)
        for j in range(m):
            if not used >> j & 1 and dist[i][j] <= radius:
                c, d = go(i + 1, used | 1 << j)
                cand = (c + 1, d + dist[i][j])
                if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                    best = cand
        memo[key] = best
        return best

    return go(0, 0)


# -- graphs -------------------------------------------------------------------------


def floyd_warshall(n, edges) -> list[list[float]]:
    d = [[math.inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0.0
    for i, j, w in edges:
        if i != j and w < d[i][j]:
            d[i][j] = d[j][i] = w
    for k in range(n):
        dk = d[k]
        for i in range(n):
            dik = d[i][k]
            if dik == math.inf:
                continue
            di = d[i]
            for j in range(n):
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return d


def brute_apls(t_nodes, t_edges, t_control, p_nodes, p_edges, snap) -> float:
    dt = floyd_warshall(len(t_nodes), t_edges)
    dp = floyd_warshall(len(p_nodes), p_edges)

    def nearest(c):
        best, arg = math.inf, None
        for k, q in enumerate(p_nodes):
            d = math.dist(t_nodes[c], q)
            if d < best:
                best, arg = d, k
        return arg if best <= snap else None

    match = {c: nearest(c) for c in t_control}
    terms = []
    ctrl = list(t_control)
    for x in range(len(ctrl)):
        for y in range(x + 1, len(ctrl)):
            a, b = ctrl[x], ctrl[y]
            d = dt[a][b]
            if d == math.inf or d == 0:
                continue
            ma, mb = match[a], match[b]
            if ma is None or mb is None or dp[ma][mb] == math.inf:
                terms.append(1.0)
            else:
                terms.append(min(abs(d - dp[ma][mb]) / d, 1.0))
    return 1.0 - sum(terms) / len(terms)

"""Planar polygon primitives shared by every other module.

Coordinates are pixel-centred: the point ``(x, y)`` is the centre of the pixel
in column ``x`` and row ``y`` (origin top-left, y grows downward).

Orientation convention: :func:`signed_area` is the plain shoelace sum over the
raw ``(x, y)`` coordinates.  Exterior rings are stored with positive signed
area and holes with negative signed area (RFC 7946 winding when the pixel
coordinates are read as an ordinary x/y plane).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DUPLICATE_TOL = 1e-9


class Point(NamedTuple):
    x: float
    y: float


def as_points(points) -> np.ndarray:
    """Coerce a sequence of points to a float64 ``(n, 2)`` array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {arr.shape}")
    return arr


def _dedupe_consecutive(pts: np.ndarray, closed: bool) -> np.ndarray:
    if len(pts) < 2:
        return pts
    step = np.hypot(*(pts[1:] - pts[:-1]).T)
    keep = np.concatenate([[True], step > DUPLICATE_TOL])
    pts = pts[keep]
    while closed and len(pts) > 1 and math.dist(pts[0], pts[-1]) <= DUPLICATE_TOL:
        pts = pts[:-1]
    return pts


class Ring:
    """Closed ring of points; the last point connects back to the first.

    Consecutive duplicates (and an explicit closing point) are removed on
    construction.  Instances are immutable.
    """

    __slots__ = ("_points",)

    def __init__(self, points):
        pts = as_points(points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("ring coordinates must be finite")
        pts = _dedupe_consecutive(pts, closed=True)
        if len(pts) < 3:
            raise ValueError(f"ring needs at least 3 distinct points, got {len(pts)}")
        pts = np.array(pts, dtype=np.float64)
        pts.setflags(write=False)
        self._points = pts

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self):
        return (Point(float(x), float(y)) for x, y in self._points)

    def __eq__(self, other) -> bool:
        return isinstance(other, Ring) and np.array_equal(self._points, other._points)

    def __hash__(self):
        return hash(self._points.tobytes())

    def __repr__(self) -> str:
        return f"Ring(n={len(self)}, area={self.signed_area():.3f})"

    def signed_area(self) -> float:
        return signed_area(self)

    def reversed(self) -> "Ring":
        return Ring(self._points[::-1])

    def oriented(self, positive: bool) -> "Ring":
        """Return this ring with the requested sign of signed area."""
        area = self.signed_area()
        if area == 0 or (area > 0) == positive:
            return self
        return self.reversed()

    def translated(self, dx: float, dy: float) -> "Ring":
        return Ring(self._points + (dx, dy))


@dataclass(frozen=True)
class PolygonWithHoles:
    exterior: Ring
    holes: tuple = ()
    dropped_rings: int = 0

    def __post_init__(self):
        object.__setattr__(self, "exterior", self.exterior.oriented(positive=True))
        object.__setattr__(
            self, "holes", tuple(h.oriented(positive=False) for h in self.holes)
        )

    @property
    def rings(self) -> tuple:
        return (self.exterior, *self.holes)

    @property
    def num_vertices(self) -> int:
        return sum(len(r) for r in self.rings)

    def area(self) -> float:
        return sum(signed_area(r) for r in self.rings)

    def translated(self, dx: float, dy: float) -> "PolygonWithHoles":
        return PolygonWithHoles(
            self.exterior.translated(dx, dy),
            tuple(h.translated(dx, dy) for h in self.holes),
            self.dropped_rings,
        )

    def validate(self) -> None:
        """Raise ``ValueError`` unless rings are simple and holes lie inside."""
        for k, ring in enumerate(self.rings):
            if not is_simple(ring):
                raise ValueError(f"ring {k} is not simple")
        for k, hole in enumerate(self.holes, start=1):
            inside = points_in_ring(hole.points, self.exterior, boundary=True)
            if not inside.all():
                raise ValueError(f"hole {k} is not inside the exterior")


@dataclass(frozen=True)
class PolygonSet:
    polygons: tuple = ()
    grid_dims: tuple = (0, 0)  # (width, height)
    dropped_regions: int = 0

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))
        object.__setattr__(self, "grid_dims", tuple(int(v) for v in self.grid_dims))

    def __len__(self) -> int:
        return len(self.polygons)

    def __iter__(self):
        return iter(self.polygons)

    @property
    def num_vertices(self) -> int:
        return sum(p.num_vertices for p in self.polygons)

    def rings(self) -> list:
        return [r for p in self.polygons for r in p.rings]

    def out_of_bounds(self, width=None, height=None) -> list[int]:
        """Indices of polygons with any coordinate outside ``[0, w] x [0, h]``."""
        w, h = self.grid_dims if width is None else (width, height)
        bad = []
        for k, poly in enumerate(self.polygons):
            for ring in poly.rings:
                p = ring.points
                if (p[:, 0] < 0).any() or (p[:, 1] < 0).any() or (p[:, 0] > w).any() or (p[:, 1] > h).any():
                    bad.append(k)
                    break
        return bad

    def translated(self, dx: float, dy: float, grid_dims=None) -> "PolygonSet":
        return PolygonSet(
            tuple(p.translated(dx, dy) for p in self.polygons),
            self.grid_dims if grid_dims is None else grid_dims,
            self.dropped_regions,
        )


def _as_array(ring) -> np.ndarray:
    return ring.points if isinstance(ring, Ring) else as_points(ring)


def signed_area(ring) -> float:
    """Shoelace area of a ring.

    Positive for the point order (0,0) -> (1,0) -> (1,1) -> (0,1), which is
    clockwise when drawn on screen with y pointing down.
    """
    p = _as_array(ring)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def turn_angle(ring, index: int) -> float:
    """Undirected angle in degrees between the two edges meeting at ``index``.

    180 means the neighbours are collinear with the vertex; 0 means the ring
    doubles back on itself.
    """
    p = _as_array(ring)
    n = len(p)
    if not -n <= index < n:
        raise IndexError(f"vertex index {index} out of range for ring of {n} points")
    v = p[index]
    u = p[index - 1] - v
    w = p[(index + 1) % n] - v
    nu, nw = math.hypot(*u), math.hypot(*w)
    if nu <= DUPLICATE_TOL or nw <= DUPLICATE_TOL:
        raise ValueError("degenerate edge")
    cross = u[0] * w[1] - u[1] * w[0]
    dot = u[0] * w[0] + u[1] * w[1]
    return math.degrees(math.atan2(abs(cross), dot))


def turn_angles(ring) -> np.ndarray:
    """Vectorised :func:`turn_angle` for every vertex of a ring."""
    p = _as_array(ring)
    u = np.roll(p, 1, axis=0) - p
    w = np.roll(p, -1, axis=0) - p
    if (np.hypot(*u.T) <= DUPLICATE_TOL).any():
        raise ValueError("degenerate edge")
    cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
    dot = (u * w).sum(axis=1)
    return np.degrees(np.arctan2(np.abs(cross), dot))


def _chord_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    length = math.hypot(d[0], d[1])
    if length == 0.0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    return np.abs(d[0] * (pts[:, 1] - a[1]) - d[1] * (pts[:, 0] - a[0])) / length


def simplify_dp_indices(points, epsilon: float) -> np.ndarray:
    """Indices kept by Douglas-Peucker simplification of an open polyline.

    A point splits its chain when its perpendicular distance to the chord is
    strictly greater than ``epsilon``; ties resolve to the lowest index.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    pts = as_points(points)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least 2 points")
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        dist = _chord_distance(pts[i + 1 : j], pts[i], pts[j])
        k = int(np.argmax(dist))
        if dist[k] > epsilon:
            m = i + 1 + k
            keep[m] = True
            stack.append((i, m))
            stack.append((m, j))
    return np.flatnonzero(keep)


def simplify_dp(points, epsilon: float) -> np.ndarray:
    pts = as_points(points)
    return pts[simplify_dp_indices(pts, epsilon)]


def simplify_ring_dp_indices(ring, epsilon: float) -> np.ndarray:
    """Douglas-Peucker on a closed ring.

    The ring is opened at its top-left-most vertex and split again at the
    vertex farthest from it; both chains are simplified independently.
    """
    p = _as_array(ring)
    n = len(p)
    start = int(np.lexsort((p[:, 0], p[:, 1]))[0])
    order = np.roll(np.arange(n), -start)
    q = p[order]
    far = int(np.argmax(np.hypot(q[:, 0] - q[0, 0], q[:, 1] - q[0, 1])))
    if far == 0:
        return order[:1]
    first = simplify_dp_indices(q[: far + 1], epsilon)
    closed = np.vstack([q[far:], q[:1]])
    second = simplify_dp_indices(closed, epsilon)[1:-1] + far
    return order[np.concatenate([first, second])]


# -- segment predicates ------------------------------------------------------


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _segments_touch(p1, p2, q1, q2) -> np.ndarray:
    """Elementwise closed-segment intersection test for arrays of segments."""
    o1 = np.sign(_orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q1[:, 0], q1[:, 1]))
    o2 = np.sign(_orient(p1[:, 0], p1[:, 1], p2[:, 0], p2[:, 1], q2[:, 0], q2[:, 1]))
    o3 = np.sign(_orient(q1[:, 0], q1[:, 1], q2[:, 0], q2[:, 1], p1[:, 0], p1[:, 1]))
    o4 = np.sign(_orient(q1[:, 0], q1[:, 1], q2[:, 0], q2[:, 1], p2[:, 0], p2[:, 1]))
    general = (o1 * o2 <= 0) & (o3 * o4 <= 0)
    collinear = (o1 == 0) & (o2 == 0)
    # collinear segments only touch when their extents overlap on both axes
    lo_p, hi_p = np.minimum(p1, p2), np.maximum(p1, p2)
    lo_q, hi_q = np.minimum(q1, q2), np.maximum(q1, q2)
    overlap = np.all((lo_p <= hi_q) & (lo_q <= hi_p), axis=1)
    return np.where(collinear, overlap, general)


def intersecting_edge_pairs(
    rings: Sequence, chunk: int = 1 << 20, first_only: bool = False
) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Edge pairs that violate simplicity across a group of rings.

    Edges are addressed as ``(ring, index)`` where edge ``index`` runs from
    vertex ``index`` to ``index + 1``.  Adjacent edges of the same ring only
    count when they fold back onto each other.
    """
    arrays = [_as_array(r) for r in rings]
    starts = np.concatenate([a for a in arrays]) if arrays else np.zeros((0, 2))
    ends = np.concatenate([np.roll(a, -1, axis=0) for a in arrays]) if arrays else starts
    ring_id = np.concatenate([np.full(len(a), k) for k, a in enumerate(arrays)]).astype(int)
    local = np.concatenate([np.arange(len(a)) for a in arrays]).astype(int)
    sizes = np.array([len(a) for a in arrays])
    m = len(starts)
    out = []

    # bounding boxes prune most pairs before the orientation tests
    lo = np.minimum(starts, ends)
    hi = np.maximum(starts, ends)
    order = np.argsort(lo[:, 0], kind="stable")
    lo_s, hi_s = lo[order], hi[order]
    # candidate j for each i: edges whose x-extent starts before i's ends
    right = np.searchsorted(lo_s[:, 0], hi_s[:, 0], side="right")
    counts = right - np.arange(m) - 1
    counts = np.maximum(counts, 0)
    total = int(counts.sum())
    if total == 0:
        return out
    ii_all = np.repeat(np.arange(m), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    jj_all = ii_all + 1 + offsets
    for s in range(0, total, chunk):
        ii = order[ii_all[s : s + chunk]]
        jj = order[jj_all[s : s + chunk]]
        keep = np.all((lo[ii] <= hi[jj]) & (lo[jj] <= hi[ii]), axis=1)
        ii, jj = ii[keep], jj[keep]
        if len(ii) == 0:
            continue
        same = ring_id[ii] == ring_id[jj]
        n_r = sizes[ring_id[ii]]
        diff = (local[jj] - local[ii]) % np.where(same, n_r, 1)
        adjacent = same & ((diff == 1) | (diff == n_r - 1))
        touch = _segments_touch(starts[ii], ends[ii], starts[jj], ends[jj])
        # adjacent edges share a vertex; they only fail when they fold back
        a_first = np.where(diff == 1, ii, jj)
        b_second = np.where(diff == 1, jj, ii)
        u = ends[a_first] - starts[a_first]
        w = ends[b_second] - starts[b_second]
        fold = (u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0] == 0) & ((u * w).sum(axis=1) < 0)
        bad = np.where(adjacent, fold, touch)
        # a triangle's three edges are mutually adjacent; handled by fold test
        for a, b in zip(ii[bad], jj[bad]):
            out.append(((int(ring_id[a]), int(local[a])), (int(ring_id[b]), int(local[b]))))
            if first_only:
                return out
    return out


def is_simple(ring) -> bool:
    """True when no two edges meet except adjacent edges at their shared vertex."""
    p = _as_array(ring)
    if len(p) < 3:
        return False
    return not intersecting_edge_pairs([p], first_only=True)


# -- distances and containment -----------------------------------------------


def ring_segments(ring) -> tuple[np.ndarray, np.ndarray]:
    p = _as_array(ring)
    return p, np.roll(p, -1, axis=0)


def point_segments_distance(points, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest of a set of segments."""
    pts = as_points(points)
    out = np.full(len(pts), np.inf)
    d = seg_b - seg_a
    len2 = (d * d).sum(axis=1)
    safe = np.where(len2 > 0, len2, 1.0)
    step = max(1, (1 << 20) // max(1, len(seg_a)))
    for s in range(0, len(pts), step):
        p = pts[s : s + step, None, :]
        t = ((p - seg_a) * d).sum(axis=2) / safe
        t = np.clip(np.where(len2 > 0, t, 0.0), 0.0, 1.0)
        proj = seg_a + t[..., None] * d
        out[s : s + step] = np.hypot(*(p - proj).transpose(2, 0, 1)).min(axis=1)
    return out


def points_in_ring(points, ring, boundary: bool = False) -> np.ndarray:
    """Even-odd containment of points in a ring; boundary points per flag."""
    pts = as_points(points)
    a, b = ring_segments(ring)
    px, py = pts[:, 0:1], pts[:, 1:2]
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = ax + (py - ay) * (bx - ax) / (by - ay)
    inside = (np.count_nonzero(straddle & (px < xcross), axis=1) % 2) == 1
    on_edge = point_segments_distance(pts, a, b) <= 1e-9
    return np.where(on_edge, boundary, inside)


def polygon_boundary_segments(poly: PolygonWithHoles) -> tuple[np.ndarray, np.ndarray]:
    segs = [ring_segments(r) for r in poly.rings]
    return np.concatenate([s[0] for s in segs]), np.concatenate([s[1] for s in segs])


def iter_vertices(polys: Iterable[PolygonWithHoles]) -> np.ndarray:
    arrays = [r.points for p in polys for r in p.rings]
    return np.concatenate(arrays) if arrays else np.zeros((0, 2))

"""Keypoint-guided polygonization of road masks.

Pipeline per traced ring: dense contour -> keypoint-guided selection of
contour points -> inflection recovery from a Douglas-Peucker pass -> merge in
contour order.  Final vertices are always points of the traced contour, so
the polygon follows the mask boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    PolygonSet,
    PolygonWithHoles,
    Ring,
    as_points,
    intersecting_edge_pairs,
    simplify_ring_dp_indices,
    turn_angles,
)
from .raster import _check_same_shape, as_mask, stitch_masks, trace_contours
from .vertices import VertexSet, nms_peaks


@dataclass(frozen=True)
class PolygonizeConfig:
    d_th: float = 5.0
    epsilon: float = 1.0
    tau: float = 30.0
    nms_threshold: float = 0.3
    nms_window: int = 5
    dedupe: float = 1.0

    def __post_init__(self):
        if not self.d_th > 0:
            raise ValueError("d_th must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 <= self.tau < 90:
            raise ValueError("tau must be in [0, 90)")
        if not 0 < self.nms_threshold < 1:
            raise ValueError("nms_threshold must be in (0, 1)")
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be odd and >= 3")


def _ring_array(contour) -> np.ndarray:
    return contour.points if isinstance(contour, Ring) else as_points(contour)


def _keypoint_xy(keypoints) -> np.ndarray:
    return as_points(getattr(keypoints, "xy", keypoints))


def keypoint_distance(points, keypoints) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each point to its nearest keypoint, and that keypoint's index."""
    pts = as_points(points)
    kp = _keypoint_xy(keypoints)
    if len(kp) == 0:
        return np.full(len(pts), np.inf), np.full(len(pts), -1)
    dist, idx = cKDTree(kp).query(pts)
    return dist, idx


def keypoint_mask(contour, keypoints, d_th: float) -> np.ndarray:
    """Contour points whose nearest keypoint is closer than ``d_th``."""
    dist, _ = keypoint_distance(_ring_array(contour), keypoints)
    return dist < d_th


def _cyclic_runs(flags: np.ndarray) -> list[np.ndarray]:
    """Maximal runs of consecutive True entries, wrapping around the end."""
    n = len(flags)
    if not flags.any():
        return []
    if flags.all():
        return [np.arange(n)]
    start = int(np.flatnonzero(~flags)[0])
    order = np.roll(np.arange(n), -start)
    f = flags[order]
    edges = np.flatnonzero(np.diff(np.concatenate([[0], f.astype(np.int8), [0]])))
    return [order[a:b] for a, b in zip(edges[0::2], edges[1::2])]


def select_keypoint_indices(contour, keypoints, d_th: float) -> np.ndarray:
    """Contour indices kept by the keypoint-distance filter, one per cluster.

    Survivors are grouped into cyclic runs that share the same nearest
    keypoint; each run collapses to its point closest to that keypoint.  When
    one keypoint owns several runs (a keypoint between two branches of a thin
    road) only its nearest run is kept.
    """
    pts = _ring_array(contour)
    dist, owner = keypoint_distance(pts, keypoints)
    survive = dist < d_th
    best: dict[int, tuple[float, int]] = {}
    for run in _cyclic_runs(survive):
        # split the run where the owning keypoint changes
        own = owner[run]
        cuts = np.flatnonzero(own[1:] != own[:-1]) + 1
        for piece in np.split(run, cuts):
            k = int(owner[piece[0]])
            j = int(piece[np.argmin(dist[piece])])
            if k not in best or dist[j] < best[k][0]:
                best[k] = (float(dist[j]), j)
    return np.array(sorted(j for _, j in best.values()), dtype=np.int64)


def filter_by_keypoints(contour, keypoints, d_th: float) -> np.ndarray:
    """Contour points retained by keypoint-guided selection, in contour order."""
    pts = _ring_array(contour)
    return pts[select_keypoint_indices(pts, keypoints, d_th)]


def inflection_indices(contour, epsilon: float, tau: float) -> np.ndarray:
    """Contour indices of Douglas-Peucker vertices with turn angle in ``[90-tau, 90+tau]``."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    pts = _ring_array(contour)
    idx = simplify_ring_dp_indices(pts, epsilon)
    if len(idx) < 3:
        return np.zeros(0, dtype=np.int64)
    theta = turn_angles(pts[idx])
    # the band is closed; the tolerance absorbs float noise from atan2
    hit = (theta >= 90.0 - tau - 1e-9) & (theta <= 90.0 + tau + 1e-9)
    return np.sort(idx[hit])


def recover_inflections(contour, epsilon: float = 1.0, tau: float = 30.0) -> VertexSet:
    pts = _ring_array(contour)
    return VertexSet(pts[inflection_indices(pts, epsilon, tau)])


def merge_order_indices(
    contour, selected, inflections, dedupe: float = 1.0, guard: float = 0.0
) -> np.ndarray:
    """Union of selected and inflection indices in contour order.

    Inflection points closer than ``guard`` to a selected point are already
    represented and are skipped.  Points within ``dedupe`` pixels of the point
    before them (cyclically) are dropped, selected points taking precedence.
    """
    pts = _ring_array(contour)
    sel = np.unique(np.asarray(selected, dtype=np.int64))
    inf = np.setdiff1d(np.asarray(inflections, dtype=np.int64), sel)
    if guard > 0 and len(sel) and len(inf):
        d, _ = cKDTree(pts[sel]).query(pts[inf])
        inf = inf[d >= guard]
    idx = np.concatenate([sel, inf])
    is_sel = np.concatenate([np.ones(len(sel), bool), np.zeros(len(inf), bool)])
    order = np.argsort(idx, kind="stable")
    idx, is_sel = idx[order], is_sel[order]
    keep: list[int] = []
    keep_sel: list[bool] = []
    for i, s in zip(idx.tolist(), is_sel.tolist()):
        if keep and math.dist(pts[i], pts[keep[-1]]) <= dedupe:
            if s and not keep_sel[-1]:
                keep[-1], keep_sel[-1] = i, s
            continue
        keep.append(i)
        keep_sel.append(s)
    while len(keep) > 1 and math.dist(pts[keep[0]], pts[keep[-1]]) <= dedupe:
        if keep_sel[-1] and not keep_sel[0]:
            keep.pop(0)
            keep_sel.pop(0)
        else:
            keep.pop()
            keep_sel.pop()
    return np.array(keep, dtype=np.int64)


def merge_and_order(contour, selected, inflections, dedupe: float = 1.0) -> Ring | None:
    """Ring through the merged indices, or ``None`` when fewer than 3 survive."""
    pts = _ring_array(contour)
    idx = merge_order_indices(pts, selected, inflections, dedupe)
    idx = repair_simplicity([pts], [idx])[0]
    if len(idx) < 3:
        return None
    return Ring(pts[idx])


def _refine_edge(dense: np.ndarray, idx: np.ndarray, e: int) -> int | None:
    """Dense index to insert on edge ``e`` (farthest from its chord), if any."""
    n = len(dense)
    a, b = int(idx[e]), int(idx[(e + 1) % len(idx)])
    span = (b - a) % n
    if len(idx) == 1:
        span = n
    if span < 2:
        return None
    between = (a + np.arange(1, span)) % n
    pa, pb = dense[a], dense[b]
    d = pb - pa
    length = math.hypot(d[0], d[1])
    q = dense[between]
    if length == 0:
        dev = np.hypot(q[:, 0] - pa[0], q[:, 1] - pa[1])
    else:
        dev = np.abs(d[0] * (q[:, 1] - pa[1]) - d[1] * (q[:, 0] - pa[0])) / length
    return int(between[int(np.argmax(dev))])


def repair_simplicity(dense_rings, index_sets, max_rounds: int = 10_000) -> list[np.ndarray]:
    """Refine crossing edges towards their dense contour until rings are simple.

    ``dense_rings[k]`` is a simple dense ring and ``index_sets[k]`` the sorted
    indices selected from it.  Any edge involved in an intersection (within a
    ring or between rings of the group) gets the dense point farthest from its
    chord inserted.  Self-intersections always resolve because the dense ring
    itself is simple; contacts between different rings that cannot be refined
    further are left in place.
    """
    dense = [_ring_array(r) for r in dense_rings]
    idx = [np.sort(np.asarray(i, dtype=np.int64)) for i in index_sets]
    for _ in range(max_rounds):
        live = [k for k, i in enumerate(idx) if len(i) >= 3]
        if not live:
            return idx
        rings = [dense[k][idx[k]] for k in live]
        pairs = intersecting_edge_pairs(rings)
        if not pairs:
            return idx
        inserts: dict[int, set[int]] = {}
        for (ra, ea), (rb, eb) in pairs:
            for r, e in ((ra, ea), (rb, eb)):
                k = live[r]
                j = _refine_edge(dense[k], idx[k], e)
                if j is not None:
                    inserts.setdefault(k, set()).add(j)
        if not inserts:
            return idx
        for k, js in inserts.items():
            idx[k] = np.union1d(idx[k], np.fromiter(js, dtype=np.int64))
    return idx


def _polygonize_rings(rings: list[Ring], keypoints: VertexSet, config: PolygonizeConfig):
    index_sets = []
    for ring in rings:
        pts = ring.points
        sel = select_keypoint_indices(pts, keypoints, config.d_th)
        inf = inflection_indices(pts, config.epsilon, config.tau)
        index_sets.append(merge_order_indices(pts, sel, inf, config.dedupe, guard=config.d_th))
    return index_sets


def polygonize_polygon(poly: PolygonWithHoles, keypoints: VertexSet, config: PolygonizeConfig):
    """Polygonize one traced polygon; returns ``None`` when the exterior is dropped."""
    rings = list(poly.rings)
    index_sets = _polygonize_rings(rings, keypoints, config)
    # exterior first: it fixes its own simplicity before holes are checked against it
    index_sets[:1] = repair_simplicity(rings[:1], index_sets[:1])
    index_sets = repair_simplicity(rings, index_sets)
    if len(index_sets[0]) < 3:
        return None
    holes, dropped = [], 0
    for ring, idx in zip(rings[1:], index_sets[1:]):
        if len(idx) < 3:
            dropped += 1
            continue
        holes.append(Ring(ring.points[idx]))
    return PolygonWithHoles(Ring(rings[0].points[index_sets[0]]), tuple(holes), dropped)


def polygonize_with_vertices(mask, keypoints, config: PolygonizeConfig | None = None) -> PolygonSet:
    """Polygonize a mask guided by an explicit keypoint set."""
    config = config or PolygonizeConfig()
    m = as_mask(mask)
    kp = keypoints if isinstance(keypoints, VertexSet) else VertexSet(keypoints)
    dense = trace_contours(m)
    polygons, dropped = [], 0
    for poly in dense:
        out = polygonize_polygon(poly, kp, config)
        if out is None:
            dropped += 1
        else:
            polygons.append(out)
    return PolygonSet(tuple(polygons), dense.grid_dims, dropped)


def polygonize(mask, heatmap, config: PolygonizeConfig | None = None) -> PolygonSet:
    """Polygonize a road mask using peaks of the vertex heatmap as guidance."""
    config = config or PolygonizeConfig()
    m = as_mask(mask)
    h = np.asarray(heatmap, dtype=np.float64)
    _check_same_shape(m, h)
    keypoints = nms_peaks(h, config.nms_threshold, config.nms_window)
    return polygonize_with_vertices(m, keypoints, config)


def merge_seam_duplicates(vertex_sets, patch_ids, radius: float) -> VertexSet:
    """Drop vertices shadowed by a higher-scored vertex from another patch.

    Per-patch NMS sees truncated windows at patch borders, so a peak just
    across a seam shows up again as a weaker edge maximum in the neighbour.
    """
    merged = VertexSet.concat(vertex_sets)
    if len(merged) < 2 or radius <= 0:
        return merged
    owner = np.concatenate([np.full(len(v), pid) for v, pid in zip(vertex_sets, patch_ids)])
    order = np.lexsort((np.arange(len(merged)), -merged.scores))
    tree = cKDTree(merged.xy)
    alive = np.ones(len(merged), dtype=bool)
    for i in order:
        if not alive[i]:
            continue
        for j in tree.query_ball_point(merged.xy[i], radius):
            if j != i and alive[j] and owner[j] != owner[i] and np.hypot(*(merged.xy[j] - merged.xy[i])) < radius:
                alive[j] = False
    return VertexSet(merged.xy[alive], merged.scores[alive])


def stitch_vertices(patch_vertices, layout: tuple[int, int], patch_shape: tuple[int, int], seam_radius: float = 0.0):
    """Shift per-patch vertices (row-major patches) into full-grid coordinates."""
    rows, cols = layout
    ph, pw = patch_shape
    if len(patch_vertices) != rows * cols:
        raise ValueError(f"layout {rows}x{cols} needs {rows * cols} vertex sets, got {len(patch_vertices)}")
    shifted = []
    for k, vs in enumerate(patch_vertices):
        vs = vs if isinstance(vs, VertexSet) else VertexSet(vs)
        i, j = divmod(k, cols)
        shifted.append(vs.translated(j * pw, i * ph))
    return merge_seam_duplicates(shifted, list(range(len(shifted))), seam_radius)


def polygonize_stitched(
    patch_masks,
    patch_vertices,
    layout: tuple[int, int],
    config: PolygonizeConfig | None = None,
    seam_radius: float | None = None,
) -> PolygonSet:
    """Polygonize a large image from per-patch masks and per-patch vertices.

    Masks are stitched, vertices shifted by their patch offsets (and seam
    duplicates merged), then the assembled grid is polygonized in one pass.
    ``seam_radius`` defaults to twice the NMS window.
    """
    config = config or PolygonizeConfig()
    rows, cols = layout
    if len(patch_masks) != rows * cols:
        raise ValueError(f"layout {rows}x{cols} needs {rows * cols} mask patches, got {len(patch_masks)}")
    mask = stitch_masks([as_mask(p) for p in patch_masks], layout)
    if seam_radius is None:
        seam_radius = 2.0 * config.nms_window
    shape = np.asarray(patch_masks[0]).shape
    keypoints = stitch_vertices(patch_vertices, layout, shape, seam_radius)
    return polygonize_with_vertices(mask, keypoints, config)

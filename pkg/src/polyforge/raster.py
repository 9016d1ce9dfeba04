"""Grid-side algorithms: rasterization, heatmaps, contour tracing, bands, skeletons.

Masks are 2-D ``bool`` arrays indexed ``[row, col]``; heatmaps are 2-D float64
arrays in ``[0, 1]``.  Pixel ``[r, c]`` has its centre at the point ``(c, r)``.
"""
from __future__ import annotations

import math

import cv2
import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import skeletonize as _skimage_skeletonize

from .geometry import PolygonSet, PolygonWithHoles, Ring, as_points, points_in_ring, signed_area

HEATMAP_TRUNCATE = 4.0


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[::-1]} vs {b.shape[::-1]} (width x height)")


# -- rasterization -------------------------------------------------------------


def _ring_boundary_pixels(p: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel centres lying exactly on the ring's edges (within 1e-9 px)."""
    a, b = p, np.roll(p, -1, axis=0)
    rows_out, cols_out = [], []
    horiz = a[:, 1] == b[:, 1]
    # non-horizontal edges: every lattice point on them sits on an integer row
    ea, eb = a[~horiz], b[~horiz]
    if len(ea):
        r0 = np.ceil(np.minimum(ea[:, 1], eb[:, 1]) - 1e-9).astype(np.int64)
        r1 = np.floor(np.maximum(ea[:, 1], eb[:, 1]) + 1e-9).astype(np.int64)
        n = np.maximum(r1 - r0 + 1, 0)
        idx = np.repeat(np.arange(len(ea)), n)
        rows = np.repeat(r0, n) + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
        x = ea[idx, 0] + (rows - ea[idx, 1]) * (eb[idx, 0] - ea[idx, 0]) / (eb[idx, 1] - ea[idx, 1])
        xr = np.round(x)
        hit = np.abs(x - xr) <= 1e-9
        rows_out.append(rows[hit])
        cols_out.append(xr[hit].astype(np.int64))
    ha, hb = a[horiz], b[horiz]
    on_row = np.abs(ha[:, 1] - np.round(ha[:, 1])) <= 1e-9
    ha, hb = ha[on_row], hb[on_row]
    if len(ha):
        c0 = np.ceil(np.minimum(ha[:, 0], hb[:, 0]) - 1e-9).astype(np.int64)
        c1 = np.floor(np.maximum(ha[:, 0], hb[:, 0]) + 1e-9).astype(np.int64)
        n = np.maximum(c1 - c0 + 1, 0)
        cols = np.repeat(c0, n) + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
        rows_out.append(np.repeat(np.round(ha[:, 1]).astype(np.int64), n))
        cols_out.append(cols)
    rows = np.concatenate(rows_out) if rows_out else np.zeros(0, np.int64)
    cols = np.concatenate(cols_out) if cols_out else np.zeros(0, np.int64)
    ok = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    return rows[ok], cols[ok]


def _ring_regions(points, width: int, height: int):
    """Return ``(r0, c0, interior, boundary)`` for a ring within its bounding box.

    ``interior`` holds pixel centres strictly inside the ring (even-odd rule)
    and ``boundary`` those exactly on an edge.
    """
    p = as_points(points)
    r0 = max(int(math.floor(p[:, 1].min())), 0)
    r1 = min(int(math.ceil(p[:, 1].max())), height - 1)
    c0 = max(int(math.floor(p[:, 0].min())), 0)
    c1 = min(int(math.ceil(p[:, 0].max())), width - 1)
    if r1 < r0 or c1 < c0:
        return 0, 0, np.zeros((0, 0), bool), np.zeros((0, 0), bool)
    h, w = r1 - r0 + 1, c1 - c0 + 1
    a, b = p, np.roll(p, -1, axis=0)
    ya, yb = a[:, 1], b[:, 1]
    lo = np.ceil(np.minimum(ya, yb)).astype(np.int64)
    hi = np.ceil(np.maximum(ya, yb)).astype(np.int64)  # half-open [lo, hi)
    lo = np.maximum(lo, r0)
    hi = np.minimum(hi, r1 + 1)
    n = np.maximum(hi - lo, 0)
    idx = np.repeat(np.arange(len(a)), n)
    rows = np.repeat(lo, n) + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
    x = a[idx, 0] + (rows - a[idx, 1]) * (b[idx, 0] - a[idx, 0]) / (b[idx, 1] - a[idx, 1])
    order = np.lexsort((x, rows))
    rows, x = rows[order], x[order]
    interior = np.zeros((h, w + 1), dtype=np.int32)
    if len(rows):
        left, right = x[0::2], x[1::2]
        rr = rows[0::2] - r0
        cl = np.clip(np.floor(left).astype(np.int64) + 1 - c0, 0, w)
        cr = np.clip(np.ceil(right).astype(np.int64) - c0, 0, w)  # exclusive
        ok = cr > cl
        np.add.at(interior, (rr[ok], cl[ok]), 1)
        np.add.at(interior, (rr[ok], cr[ok]), -1)
    interior = np.cumsum(interior, axis=1)[:, :w] > 0
    boundary = np.zeros((h, w), dtype=bool)
    br, bc = _ring_boundary_pixels(p, width, height)
    boundary[br - r0, bc - c0] = True
    interior &= ~boundary
    return r0, c0, interior, boundary


def rasterize_polygon(poly: PolygonWithHoles, width: int, height: int, out=None) -> np.ndarray:
    """OR one polygon into ``out``: closed exterior minus open hole interiors."""
    if out is None:
        out = np.zeros((height, width), dtype=bool)
    r0, c0, inner, edge = _ring_regions(poly.exterior.points, width, height)
    if inner.size == 0:
        return out
    region = inner | edge
    h, w = region.shape
    for hole in poly.holes:
        hr, hc, h_in, _ = _ring_regions(hole.points, width, height)
        if h_in.size == 0:
            continue
        # clip the hole window to the exterior window
        rs, cs = max(hr, r0), max(hc, c0)
        re, ce = min(hr + h_in.shape[0], r0 + h), min(hc + h_in.shape[1], c0 + w)
        if re <= rs or ce <= cs:
            continue
        region[rs - r0 : re - r0, cs - c0 : ce - c0] &= ~h_in[rs - hr : re - hr, cs - hc : ce - hc]
    out[r0 : r0 + h, c0 : c0 + w] |= region
    return out


def rasterize(polygons: PolygonSet, width: int | None = None, height: int | None = None) -> np.ndarray:
    """Binary mask of pixels whose centre lies in some polygon.

    A pixel belongs to a polygon when its centre is inside or on the exterior
    ring and not strictly inside a hole, so rasterizing a traced contour gives
    back the traced pixels.
    """
    if width is None:
        width, height = polygons.grid_dims
    bad = polygons.out_of_bounds(width, height)
    if bad:
        raise ValueError(f"polygons out of bounds of {width}x{height} grid: indices {bad}")
    out = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        rasterize_polygon(poly, width, height, out)
    return out


# -- heatmaps ------------------------------------------------------------------


def render_heatmap(vertices, width: int, height: int, sigma: float = 5.0) -> np.ndarray:
    """Gaussian vertex heatmap, peaks of 1.0 combined by per-pixel maximum.

    ``vertices`` is a VertexSet or an ``(n, 2)`` array of ``(x, y)``.  Each
    Gaussian is truncated at 4 sigma.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    xy = getattr(vertices, "xy", vertices)
    xy = as_points(xy)
    out = np.zeros((height, width), dtype=np.float64)
    radius = HEATMAP_TRUNCATE * sigma
    inv = 1.0 / (2.0 * sigma * sigma)
    for x, y in xy:
        c0, c1 = max(int(math.ceil(x - radius)), 0), min(int(math.floor(x + radius)), width - 1)
        r0, r1 = max(int(math.ceil(y - radius)), 0), min(int(math.floor(y + radius)), height - 1)
        if c1 < c0 or r1 < r0:
            continue
        dx2 = (np.arange(c0, c1 + 1) - x) ** 2
        dy2 = (np.arange(r0, r1 + 1) - y) ** 2
        d2 = dy2[:, None] + dx2[None, :]
        val = np.where(d2 <= radius * radius, np.exp(-d2 * inv), 0.0)
        window = out[r0 : r1 + 1, c0 : c1 + 1]
        np.maximum(window, val, out=window)
    return np.clip(out, 0.0, 1.0, out=out)


# -- contour tracing -------------------------------------------------------------


def _remove_spikes(pts: list) -> list:
    """Drop out-and-back excursions (A, B, A) from a closed pixel path."""
    stack: list = []
    for p in pts:
        if len(stack) >= 2 and stack[-2] == p:
            stack.pop()
            continue
        if stack and stack[-1] == p:
            continue
        stack.append(p)
    changed = True
    while changed and len(stack) >= 3:
        changed = False
        if stack[0] == stack[-1]:
            stack.pop()
            changed = True
        elif stack[-2] == stack[0]:
            stack.pop()
            changed = True
        elif stack[-1] == stack[1]:
            stack.pop(0)
            changed = True
    return stack


def _split_loops(pts: list) -> list[list]:
    """Split a closed path at repeated vertices into loops without repeats."""
    out = []
    work = [pts]
    while work:
        path = _remove_spikes(work.pop())
        if len(path) < 3:
            continue
        seen: dict = {}
        for j, p in enumerate(path):
            i = seen.get(p)
            if i is not None:
                work.append(path[i:j])
                work.append(path[j:] + path[:i])
                break
            seen[p] = j
        else:
            out.append(path)
    return out


def _contour_rings(contour: np.ndarray, exterior: bool) -> list[Ring]:
    pts = [tuple(p) for p in contour.reshape(-1, 2).tolist()]
    rings = []
    for loop in _split_loops(pts):
        arr = np.asarray(loop, dtype=np.float64)
        area = signed_area(arr)
        if area == 0:
            continue
        # the tracer emits exteriors with negative area and holes with positive
        if (area < 0) != exterior:
            continue
        rings.append(Ring(arr))
    return rings


def trace_contours(mask) -> PolygonSet:
    """Trace every 8-connected foreground region into dense rings with holes.

    Each output vertex is a boundary pixel centre.  Out-and-back spikes of
    one-pixel-wide appendages are removed and rings that touch themselves at a
    pixel are split, so every ring is simple.
    """
    m = as_mask(mask)
    height, width = m.shape
    contours, hierarchy = cv2.findContours(
        m.astype(np.uint8), cv2.RETR_CCOMP, cv2.CHAIN_APPROX_NONE
    )
    polygons = []
    if hierarchy is None:
        return PolygonSet((), (width, height))
    hierarchy = hierarchy[0]
    for k, (_, _, child, parent) in enumerate(hierarchy):
        if parent != -1:
            continue
        exteriors = _contour_rings(contours[k], exterior=True)
        if not exteriors:
            continue
        holes = []
        c = child
        while c != -1:
            holes.extend(_contour_rings(contours[c], exterior=False))
            c = hierarchy[c][0]
        polygons.extend(_assign_holes(exteriors, holes))
    return PolygonSet(tuple(polygons), (width, height))


def _assign_holes(exteriors: list[Ring], holes: list[Ring]) -> list[PolygonWithHoles]:
    if len(exteriors) == 1:
        return [PolygonWithHoles(exteriors[0], tuple(holes))]

    buckets: list[list[Ring]] = [[] for _ in exteriors]
    for hole in holes:
        # hole vertices may sit on a one-pixel wall shared with the exterior,
        # so vote by how many of them each loop contains
        votes = [int(points_in_ring(hole.points, ext, boundary=True).sum()) for ext in exteriors]
        buckets[int(np.argmax(votes))].append(hole)
    return [PolygonWithHoles(e, tuple(b)) for e, b in zip(exteriors, buckets)]


# -- boundary bands and skeletons ------------------------------------------------


def boundary_band(mask, d: float) -> np.ndarray:
    """Pixels within Euclidean distance ``d`` of the foreground/background interface.

    A foreground pixel is in the band when some background pixel centre lies
    within ``d``, and vice versa.  The image border is not an interface.
    """
    if d <= 0:
        raise ValueError("d must be > 0")
    m = as_mask(mask)
    if m.all() or not m.any():
        return np.zeros_like(m)
    to_bg = ndi.distance_transform_edt(m)
    to_fg = ndi.distance_transform_edt(~m)
    return np.where(m, to_bg <= d, to_fg <= d)


def inner_boundary_band(mask, d: float) -> np.ndarray:
    """Foreground half of :func:`boundary_band`: ``boundary_band(mask, d) & mask``."""
    if d <= 0:
        raise ValueError("d must be > 0")
    m = as_mask(mask)
    if m.all() or not m.any():
        return np.zeros_like(m)
    return m & (ndi.distance_transform_edt(m) <= d)


def skeletonize(mask) -> np.ndarray:
    """One-pixel-wide skeleton by Zhang-Suen style thinning."""
    m = as_mask(mask)
    if not m.any():
        return np.zeros_like(m)
    return _skimage_skeletonize(m)


# -- tiling ---------------------------------------------------------------------


def tile(grid, patch_size: int) -> tuple[list[np.ndarray], tuple[int, int]]:
    """Split a grid into non-overlapping square patches in row-major order.

    Returns ``(patches, (rows, cols))``.
    """
    g = np.asarray(grid)
    h, w = g.shape[:2]
    if patch_size <= 0:
        raise ValueError("patch_size must be > 0")
    if h % patch_size or w % patch_size:
        ph = -h % patch_size
        pw = -w % patch_size
        raise ValueError(
            f"grid {w}x{h} is not divisible by patch size {patch_size}; "
            f"pad by {pw} columns and {ph} rows to {w + pw}x{h + ph}"
        )
    rows, cols = h // patch_size, w // patch_size
    patches = [
        g[i * patch_size : (i + 1) * patch_size, j * patch_size : (j + 1) * patch_size].copy()
        for i in range(rows)
        for j in range(cols)
    ]
    return patches, (rows, cols)


def stitch_masks(patches, layout: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`tile`: reassemble row-major patches into one grid."""
    rows, cols = layout
    patches = [np.asarray(p) for p in patches]
    if len(patches) != rows * cols:
        raise ValueError(f"layout {rows}x{cols} needs {rows * cols} patches, got {len(patches)}")
    shape = patches[0].shape
    if any(p.shape != shape for p in patches):
        raise ValueError("patches must all have the same shape")
    return np.block([[patches[i * cols + j] for j in range(cols)] for i in range(rows)])

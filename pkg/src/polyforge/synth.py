"""Synthetic road scenes for tests, benchmarks and the ``synth`` subcommand.

A scene is a main road crossing the grid, a few branches leaving it, and
optional rectangular loop roads whose interiors become holes.  Centrelines
are buffered with flat caps and mitred joins, unioned, clipped to a margin
box and snapped to integer pixel centres.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import ndimage
from scipy.spatial import cKDTree
from shapely.geometry import LineString, MultiPolygon, Polygon, box

from .geometry import PolygonSet, PolygonWithHoles, Ring, is_simple
from .raster import rasterize, render_heatmap
from .vertices import polygon_vertices


@dataclass(frozen=True)
class Degradation:
    boundary_noise_px: float = 0.0
    vertex_dropout_prob: float = 0.0
    vertex_jitter_px: float = 0.0
    blur_sigma: float = 0.0
    peak_scale: float = 1.0

    def __post_init__(self):
        for name in ("boundary_noise_px", "vertex_jitter_px", "blur_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.vertex_dropout_prob <= 1.0:
            raise ValueError("vertex_dropout_prob must be in [0, 1]")
        if not 0.0 < self.peak_scale <= 1.0:
            raise ValueError("peak_scale must be in (0, 1]")

    @property
    def is_zero(self) -> bool:
        return (
            self.boundary_noise_px == 0
            and self.vertex_dropout_prob == 0
            and self.vertex_jitter_px == 0
            and self.blur_sigma == 0
            and self.peak_scale == 1.0
        )


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    grid: tuple[int, int] = (256, 256)
    road_width: tuple[float, float] = (10.0, 18.0)
    branches: int = 2
    curvature: float = 0.3
    holes: int = 0
    degradation: Degradation = field(default_factory=Degradation)
    min_vertex_spacing: float = 10.0
    margin: int = 4
    sigma: float = 5.0
    max_retries: int = 200

    def __post_init__(self):
        w, h = self.grid
        if w <= 0 or h <= 0:
            raise ValueError("grid dimensions must be positive")
        lo, hi = self.road_width
        if not 0 < lo <= hi:
            raise ValueError("road_width must be a positive (min, max) range")
        if self.branches < 0 or self.holes < 0:
            raise ValueError("branches and holes must be >= 0")
        if not 0.0 <= self.curvature <= 1.0:
            raise ValueError("curvature must be in [0, 1]")
        if self.min_vertex_spacing <= 0 or self.sigma <= 0 or self.max_retries < 1:
            raise ValueError("min_vertex_spacing, sigma and max_retries must be positive")
        if self.holes > len(_LOOP_SLOTS) or self.branches > len(_BRANCH_SLOTS) - (2 if self.holes else 0):
            raise ValueError("too many holes or branches: at most 2 holes, and 4 branches (2 with holes)")
        if not 0 <= self.margin < min(w, h) / 4:
            raise ValueError("margin too large for the grid")
        if isinstance(self.degradation, dict):
            object.__setattr__(self, "degradation", Degradation(**self.degradation))


@dataclass(frozen=True)
class Scene:
    truth: PolygonSet
    mask: np.ndarray
    heatmap: np.ndarray
    degraded_mask: np.ndarray
    degraded_heatmap: np.ndarray


class SceneError(RuntimeError):
    pass


# bends and attachment points sit at disjoint fractions of a road's span
_BEND_AT = (0.5, 0.25, 0.75)
_BRANCH_SLOTS = (0.375, 0.625, 0.15, 0.85)
_LOOP_SLOTS = (0.25, 0.75)


def _polyline(rng, start, end, curvature: float, scale: float, max_bends: int = 3) -> np.ndarray:
    start, end = np.asarray(start, float), np.asarray(end, float)
    span = end - start
    n_bends = min(int(round(3 * curvature)), max_bends)
    if n_bends == 0:
        return np.vstack([start, end])
    t = np.concatenate([[0.0], np.sort(_BEND_AT[:n_bends]), [1.0]])
    normal = np.array([-span[1], span[0]]) / np.hypot(*span)
    offs = rng.uniform(-1, 1, n_bends + 2) * curvature * 0.08 * scale
    offs[[0, -1]] = 0
    return start + t[:, None] * span + offs[:, None] * normal


def _extend(line: np.ndarray, pad: float) -> np.ndarray:
    line = line.copy()
    for end, nxt in ((0, 1), (-1, -2)):
        d = line[end] - line[nxt]
        line[end] = line[end] + d / np.hypot(*d) * pad
    return line


def _road(line: np.ndarray, width: float):
    return LineString(line).buffer(width / 2, cap_style="flat", join_style="mitre", mitre_limit=2.0)


def _point_at(line: np.ndarray, frac: float) -> tuple[np.ndarray, np.ndarray]:
    """Point at fraction ``frac`` of the line's chord, with the local unit tangent."""
    chord = line[-1] - line[0]
    proj = (line - line[0]) @ chord / (chord @ chord)
    k = int(np.clip(np.searchsorted(proj, frac) - 1, 0, len(line) - 2))
    a, b = line[k], line[k + 1]
    u = (frac - proj[k]) / max(proj[k + 1] - proj[k], 1e-12)
    return a + u * (b - a), (b - a) / np.hypot(*(b - a))


def _exit_distance(p: np.ndarray, direction: np.ndarray, w: int, h: int) -> float:
    """Distance from ``p`` along ``direction`` to the grid boundary."""
    out = np.inf
    for k, size in ((0, w), (1, h)):
        if direction[k] > 0:
            out = min(out, (size - p[k]) / direction[k])
        elif direction[k] < 0:
            out = min(out, -p[k] / direction[k])
    return float(out)


def _random_scene(rng, spec: SceneSpec):
    w, h = spec.grid
    lo, hi = spec.road_width
    scale = min(w, h)
    pad = 2 * hi
    horizontal = rng.random() < 0.5
    a, b = rng.uniform(0.35, 0.65, 2)
    if horizontal:
        start, end = (0.0, a * h), (float(w), b * h)
    else:
        start, end = (a * w, 0.0), (b * w, float(h))
    # loops need straight main-road stretches, so they keep it to one bend
    main = _polyline(rng, start, end, spec.curvature, scale, max_bends=1 if spec.holes else 3)
    roads = [_road(_extend(main, pad), rng.uniform(lo, hi))]
    loop_slots = list(rng.permutation(_LOOP_SLOTS))
    slots = list(rng.permutation(_BRANCH_SLOTS[:2] if spec.holes else _BRANCH_SLOTS))
    loop_side = rng.choice([-1, 1])

    for _ in range(spec.holes):
        p, tangent = _point_at(main, loop_slots.pop())
        normal = np.array([-tangent[1], tangent[0]]) * loop_side
        half = rng.uniform(0.05, 0.07) * scale
        depth = rng.uniform(0.15, 0.25) * scale
        # a U-shaped side road whose legs end on the main centreline
        u_path = [p - half * tangent, p - half * tangent + depth * normal, p + half * tangent + depth * normal, p + half * tangent]
        roads.append(_road(np.array(u_path), rng.uniform(lo, hi)))

    for _ in range(spec.branches):
        p, tangent = _point_at(main, slots.pop())
        side = -loop_side if spec.holes else rng.choice([-1, 1])
        normal = np.array([-tangent[1], tangent[0]]) * side
        angle = np.radians(rng.uniform(-20, 20))
        c, s = np.cos(angle), np.sin(angle)
        direction = np.array([c * normal[0] - s * normal[1], s * normal[0] + c * normal[1]])
        far = p + direction * _exit_distance(p, direction, w, h)
        branch = _polyline(rng, p, far, spec.curvature, scale)
        branch[-1] += direction * pad
        roads.append(_road(branch, rng.uniform(lo, hi)))

    geom = shapely.union_all(roads)
    m = spec.margin
    geom = geom.intersection(box(m, m, w - m, h - m))
    geom = shapely.set_precision(geom, 1.0)
    return shapely.simplify(geom, 0.0)


def _to_polygon_set(geom, grid) -> PolygonSet:
    parts = [geom] if isinstance(geom, Polygon) else list(getattr(geom, "geoms", []))
    polys = []
    for g in parts:
        if not isinstance(g, Polygon) or g.is_empty:
            raise SceneError("non-polygonal scene geometry")
        ext = Ring(np.asarray(g.exterior.coords)[:-1])
        holes = tuple(Ring(np.asarray(r.coords)[:-1]) for r in g.interiors)
        polys.append(PolygonWithHoles(ext, holes))
    return PolygonSet(tuple(polys), grid)


def _acceptable(geom, truth: PolygonSet, spec: SceneSpec) -> bool:
    if geom.is_empty or not geom.is_valid:
        return False
    if isinstance(geom, MultiPolygon):
        return False
    if sum(len(p.holes) for p in truth) != spec.holes:
        return False
    if not all(is_simple(r) for r in truth.rings()):
        return False
    pts = polygon_vertices(truth).xy
    if len(pts) > 1:
        if cKDTree(pts).query_pairs(spec.min_vertex_spacing - 1e-9):
            return False
    # every ring must be wide enough to survive rasterisation as one region
    opened = geom.buffer(-1.0).buffer(1.0, join_style="mitre")
    return opened.symmetric_difference(geom).area < 0.02 * geom.area


def _degrade_mask(rng, mask: np.ndarray, noise_px: float) -> np.ndarray:
    if noise_px == 0:
        return mask.copy()
    sdf = ndimage.distance_transform_edt(mask) - ndimage.distance_transform_edt(~mask)
    field_ = ndimage.gaussian_filter(rng.standard_normal(mask.shape), 3.0)
    field_ *= noise_px / max(np.abs(field_).max(), 1e-12)
    return (sdf + field_) > 0


def _degrade_heatmap(rng, truth: PolygonSet, spec: SceneSpec) -> np.ndarray:
    deg = spec.degradation
    w, h = spec.grid
    xy = polygon_vertices(truth).xy
    # blur and peak rescale act on each Gaussian before any vertex is dropped
    sigma = float(np.hypot(spec.sigma, deg.blur_sigma))
    amplitude = deg.peak_scale * (spec.sigma / sigma) ** 2
    keep = rng.random(len(xy)) >= deg.vertex_dropout_prob
    xy = xy[keep]
    if deg.vertex_jitter_px > 0:
        xy = xy + rng.uniform(-deg.vertex_jitter_px, deg.vertex_jitter_px, xy.shape)
        xy = np.clip(xy, 0, [w - 1, h - 1])
    return render_heatmap(xy, w, h, sigma) * amplitude


def synth_scene(spec: SceneSpec) -> Scene:
    """Generate a deterministic scene for ``spec.seed``; retries until the geometry is clean."""
    rng = np.random.default_rng(spec.seed)
    w, h = spec.grid
    for _ in range(spec.max_retries):
        geom = _random_scene(rng, spec)
        try:
            truth = _to_polygon_set(geom, (w, h))
        except (SceneError, ValueError):
            continue
        if _acceptable(geom, truth, spec):
            break
    else:
        raise SceneError(f"no valid scene after {spec.max_retries} attempts (seed {spec.seed})")

    mask = rasterize(truth, w, h)
    heatmap = render_heatmap(polygon_vertices(truth), w, h, spec.sigma)
    deg = spec.degradation
    if deg.is_zero:
        return Scene(truth, mask, heatmap, mask.copy(), heatmap.copy())
    return Scene(truth, mask, heatmap, _degrade_mask(rng, mask, deg.boundary_noise_px), _degrade_heatmap(rng, truth, spec))

"""File formats: PNG masks/heatmaps, GeoJSON geometry, SF parameters, reports.

GeoJSON is written canonically (sorted keys, coordinates rounded to 3
decimals, closed rings) in pixel coordinates with y pointing down.
"""
from __future__ import annotations

import contextlib
import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .apls import RoadGraph
from .geometry import PolygonSet, PolygonWithHoles, Ring
from .metrics import METRIC_FIELDS, EvalReport, SfParams, report_to_json
from .vertices import VertexSet

COORD_DECIMALS = 3


@contextlib.contextmanager
def atomic_write(path, mode: str = "w", **kwargs):
    """Write to a temp file beside ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# -- rasters -------------------------------------------------------------------


def write_mask_png(path, mask) -> None:
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    with atomic_write(path, "wb") as fh:
        Image.fromarray(data, mode="L").save(fh, format="PNG")


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: expected an 8-bit grayscale mask")
    bad = np.setdiff1d(np.unique(arr), [0, 255])
    if len(bad):
        raise ValueError(f"{path}: mask values must be 0 or 255, found {bad[:5].tolist()}")
    return arr == 255


def quantize_heatmap(heatmap) -> np.ndarray:
    h = np.asarray(heatmap, dtype=np.float64)
    if not np.all(np.isfinite(h)) or h.min(initial=0) < 0 or h.max(initial=0) > 1:
        raise ValueError("heatmap values must be finite and in [0, 1]")
    return np.round(h * 65535.0).astype(np.uint16)


def write_heatmap_png(path, heatmap) -> None:
    data = quantize_heatmap(heatmap)
    with atomic_write(path, "wb") as fh:
        Image.fromarray(data).save(fh, format="PNG")


def read_heatmap_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2 or arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise ValueError(f"{path}: expected a 16-bit grayscale heatmap")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64) / 65535.0


# -- GeoJSON ---------------------------------------------------------------------


def _round(v: float) -> float:
    r = round(float(v), COORD_DECIMALS)
    return 0.0 if r == 0 else r


def _ring_coords(ring: Ring) -> list:
    pts = [[_round(x), _round(y)] for x, y in ring.points]
    return pts + [pts[0]]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def polygons_to_geojson(polys: PolygonSet) -> dict:
    features = []
    for poly in polys:
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_ring_coords(r) for r in poly.rings]},
                "properties": {"num_vertices": poly.num_vertices, "dropped_rings": poly.dropped_rings},
            }
        )
    return {
        "type": "FeatureCollection",
        "features": features,
        "grid_dims": list(polys.grid_dims),
        "dropped_regions": polys.dropped_regions,
    }


def _iter_geometries(obj):
    kind = obj.get("type")
    if kind == "FeatureCollection":
        for feat in obj.get("features", []):
            yield from _iter_geometries(feat)
    elif kind == "Feature":
        if obj.get("geometry") is not None:
            yield obj["geometry"], obj.get("properties") or {}
    elif kind == "GeometryCollection":
        for g in obj.get("geometries", []):
            yield g, {}
    elif kind is not None:
        yield obj, {}
    else:
        raise ValueError("not a GeoJSON object")


def _polygon_from_coords(rings, props) -> PolygonWithHoles:
    if not rings:
        raise ValueError("polygon without rings")
    ext, *holes = [Ring(np.asarray(r, dtype=np.float64)[:, :2]) for r in rings]
    return PolygonWithHoles(ext, tuple(holes), int(props.get("dropped_rings", 0)))


def polygons_from_geojson(obj: dict, grid_dims=None) -> PolygonSet:
    polys = []
    for geom, props in _iter_geometries(obj):
        if geom["type"] == "Polygon":
            polys.append(_polygon_from_coords(geom["coordinates"], props))
        elif geom["type"] == "MultiPolygon":
            polys.extend(_polygon_from_coords(c, props) for c in geom["coordinates"])
        else:
            raise ValueError(f"unsupported geometry type {geom['type']!r} in polygon file")
    dims = grid_dims or obj.get("grid_dims") or (0, 0)
    return PolygonSet(tuple(polys), tuple(dims), int(obj.get("dropped_regions", 0)))


def write_polygons(path, polys: PolygonSet) -> None:
    with atomic_write(path) as fh:
        fh.write(_dump(polygons_to_geojson(polys)))


def read_polygons(path, grid_dims=None) -> PolygonSet:
    with open(path) as fh:
        return polygons_from_geojson(json.load(fh), grid_dims)


def vertices_to_geojson(vs: VertexSet) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [_round(x), _round(y)]},
                "properties": {"score": _round(s)},
            }
            for (x, y), s in zip(vs.xy, vs.scores)
        ],
    }


def vertices_from_geojson(obj: dict) -> VertexSet:
    xy, scores = [], []
    for geom, props in _iter_geometries(obj):
        if geom["type"] == "Point":
            pts = [geom["coordinates"]]
        elif geom["type"] == "MultiPoint":
            pts = geom["coordinates"]
        else:
            raise ValueError(f"unsupported geometry type {geom['type']!r} in vertex file")
        for p in pts:
            xy.append(p[:2])
            scores.append(float(props.get("score", 1.0)))
    return VertexSet(np.asarray(xy, dtype=np.float64).reshape(-1, 2), np.asarray(scores))


def write_vertices(path, vs: VertexSet) -> None:
    with atomic_write(path) as fh:
        fh.write(_dump(vertices_to_geojson(vs)))


def read_vertices(path) -> VertexSet:
    with open(path) as fh:
        return vertices_from_geojson(json.load(fh))


def graph_to_geojson(graph: RoadGraph) -> dict:
    features = []
    for k, (i, j, w) in enumerate(graph.edges):
        coords = graph.paths[k] if graph.paths else graph.nodes[[i, j]]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [[_round(x), _round(y)] for x, y in coords]},
                "properties": {"length": _round(w), "source": i, "target": j},
            }
        )
    control = set(graph.control.tolist())
    for n, (x, y) in enumerate(graph.nodes):
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [_round(x), _round(y)]},
                "properties": {"node": n, "control": n in control},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_graph(path, graph: RoadGraph) -> None:
    with atomic_write(path) as fh:
        fh.write(_dump(graph_to_geojson(graph)))


# -- parameters and reports ------------------------------------------------------


def write_sf_params(path, params: SfParams) -> None:
    with atomic_write(path) as fh:
        fh.write(_dump(params.to_json()))


def read_sf_params(path) -> SfParams:
    with open(path) as fh:
        return SfParams.from_json(json.load(fh))


def _json_safe(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def report_json_text(report: EvalReport) -> str:
    return json.dumps(_json_safe(report_to_json(report)), sort_keys=True, indent=2) + "\n"


def report_csv_text(report: EvalReport) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image", *METRIC_FIELDS])

    def cell(v):
        return "" if v is None or (isinstance(v, float) and math.isnan(v)) else v

    for m in report.images:
        writer.writerow([m.image, *(cell(v) for v in m.metrics().values())])
    agg = report.aggregate()
    writer.writerow(["aggregate", *(cell(agg[k]) for k in METRIC_FIELDS)])
    return buf.getvalue()


def write_report(path, report: EvalReport) -> None:
    text = report_csv_text(report) if str(path).endswith(".csv") else report_json_text(report)
    with atomic_write(path) as fh:
        fh.write(text)

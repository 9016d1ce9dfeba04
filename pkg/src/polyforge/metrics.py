"""Evaluation metrics for polygonal road outlines.

Pixel coverage (IoU, boundary IoU), vertex redundancy (N-ratio, C-IoU),
simplicity (SF, S-IoU with log-normal thresholds), regularity (PoLiS, SCR)
and, through :mod:`polyforge.apls`, connectivity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import expit

from .geometry import (
    PolygonSet,
    PolygonWithHoles,
    point_segments_distance,
    polygon_boundary_segments,
    turn_angles,
)
from .apls import apls_from_masks
from .raster import _check_same_shape, as_mask, inner_boundary_band, rasterize, rasterize_polygon

METRIC_FIELDS = ("iou", "b_iou", "c_iou", "n_ratio", "polis", "s_iou", "sf", "scr", "apls", "n_pred", "n_gt")


# -- coverage ------------------------------------------------------------------


def iou(a, b) -> float:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def default_band_width(width: int, height: int, ratio: float = 0.02) -> float:
    return ratio * math.hypot(width, height)


def boundary_iou(a, b, d: float | None = None) -> float:
    """IoU of the inner boundary bands ``boundary_band(x, d) & x`` of both masks."""
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    if d is None:
        d = default_band_width(a.shape[1], a.shape[0])
    return iou(inner_boundary_band(a, d), inner_boundary_band(b, d))


# -- vertex redundancy -------------------------------------------------------------


def c_iou(iou_value: float, n_gt: int, n_pred: int) -> float:
    """IoU scaled by ``1 - |n_gt - n_pred| / (n_gt + n_pred)``."""
    if n_gt < 3 or n_pred < 3:
        raise ValueError("vertex counts must be >= 3")
    return iou_value * (1.0 - abs(n_gt - n_pred) / (n_gt + n_pred))


# -- simplicity ------------------------------------------------------------------


@dataclass(frozen=True)
class LogNormalFit:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


@dataclass(frozen=True)
class SfParams:
    k: float
    thresholds: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if not self.k > 0:
            raise ValueError("decay rate k must be > 0")
        if len(t) != 3:
            raise ValueError("need exactly three thresholds")
        if not all(v > 3 for v in t):
            raise ValueError("thresholds must all exceed 3")
        if not t[0] < t[1] < t[2]:
            raise ValueError("thresholds must be strictly increasing")

    @classmethod
    def from_fit(cls, fit: LogNormalFit, k: float = 0.1) -> "SfParams":
        if fit.sigma == 0:
            raise ValueError("all vertex counts are equal: the log-normal fit has zero spread")
        return cls(k, sf_thresholds(fit))

    def to_json(self) -> dict:
        n1, n2, n3 = self.thresholds
        return {"k": self.k, "n1": n1, "n2": n2, "n3": n3}

    @classmethod
    def from_json(cls, data: dict) -> "SfParams":
        return cls(float(data["k"]), (data["n1"], data["n2"], data["n3"]))


def fit_lognormal(counts) -> LogNormalFit:
    """Maximum-likelihood log-normal fit: mean and population std of ``ln N``."""
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or len(c) < 2:
        raise ValueError("need at least 2 counts")
    if (c < 1).any():
        raise ValueError("counts must all be >= 1")
    logs = np.log(c)
    return LogNormalFit(float(logs.mean()), float(logs.std()))


def sf_thresholds(fit: LogNormalFit) -> tuple[float, float, float]:
    """Upper bounds ``exp(mu + i sigma)`` of the 1, 2 and 3 sigma intervals."""
    return tuple(math.exp(fit.mu + i * fit.sigma) for i in (1, 2, 3))


def simplicity_factor(n, params: SfParams):
    """Mean of three logistic terms, 1 at ``n = 3`` and decaying to 0.

    Each term is ``(1 + exp(k (3 - N_i))) / (1 + exp(k (n - N_i)))``.
    Accepts a scalar or an array of vertex counts.
    """
    arr = np.asarray(n, dtype=np.float64)
    if (arr < 3).any():
        raise ValueError("vertex count must be >= 3")
    k = params.k
    total = np.zeros_like(arr)
    for t in params.thresholds:
        # 1 / (1 + e^x) == expit(-x) stays finite for huge n
        total = total + (1.0 + math.exp(k * (3.0 - t))) * expit(-k * (arr - t))
    out = total / 3.0
    return float(out) if out.ndim == 0 else out


def s_iou(iou_value: float, n: int, params: SfParams) -> float:
    return iou_value * simplicity_factor(n, params)


# -- regularity ----------------------------------------------------------------


def polis(a: PolygonWithHoles, b: PolygonWithHoles) -> float:
    """Symmetric mean vertex-to-boundary distance between two polygons."""
    va = np.concatenate([r.points for r in a.rings])
    vb = np.concatenate([r.points for r in b.rings])
    sa, ea = polygon_boundary_segments(a)
    sb, eb = polygon_boundary_segments(b)
    return 0.5 * point_segments_distance(va, sb, eb).mean() + 0.5 * point_segments_distance(vb, sa, ea).mean()


def count_inflections(polygons, theta_turn: float = 30.0) -> int:
    """Vertices whose turn ``180 - angle`` exceeds ``theta_turn`` degrees."""
    rings = polygons.rings() if isinstance(polygons, PolygonSet) else [r for p in polygons for r in p.rings]
    return int(sum(np.count_nonzero(180.0 - turn_angles(r) > theta_turn) for r in rings))


def scr(pred: PolygonSet, truth: PolygonSet, theta_turn: float = 30.0) -> float:
    """Ratio of predicted to ground-truth inflection counts."""
    n_truth = count_inflections(truth, theta_turn)
    if n_truth == 0:
        raise ValueError("SCR undefined: smooth ground truth")
    return count_inflections(pred, theta_turn) / n_truth


# -- polygon matching ---------------------------------------------------------------


def _label_image(polygons: PolygonSet, width: int, height: int) -> np.ndarray:
    labels = np.zeros((height, width), dtype=np.int32)
    for k, poly in enumerate(polygons, start=1):
        m = rasterize_polygon(poly, width, height)
        labels[m & (labels == 0)] = k
    return labels


def match_polygons(pred: PolygonSet, truth: PolygonSet, width: int, height: int) -> list[tuple[int, int]]:
    """Greedy one-to-one ``(pred, truth)`` pairs by decreasing rasterized overlap."""
    if len(pred) == 0 or len(truth) == 0:
        return []
    lp = _label_image(pred, width, height)
    lt = _label_image(truth, width, height)
    both = (lp > 0) & (lt > 0)
    code = lp[both].astype(np.int64) * (len(truth) + 1) + lt[both]
    values, counts = np.unique(code, return_counts=True)
    pairs = sorted(
        zip(counts.tolist(), (values // (len(truth) + 1)).tolist(), (values % (len(truth) + 1)).tolist()),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_p, used_t, out = set(), set(), []
    for _, p, t in pairs:
        if p not in used_p and t not in used_t:
            used_p.add(p)
            used_t.add(t)
            out.append((p - 1, t - 1))
    return out


# -- full evaluation -------------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    band_width: float | None = None
    theta_turn: float = 30.0
    snap_radius: float = 25.0
    symmetric_apls: bool = False
    sf_params: SfParams | None = None


@dataclass
class ImageMetrics:
    image: str = ""
    iou: float = math.nan
    b_iou: float = math.nan
    c_iou: float = math.nan
    n_ratio: float = math.nan
    polis: float = math.nan
    s_iou: float = math.nan
    sf: float = math.nan
    scr: float = math.nan
    apls: float = math.nan
    n_pred: int = 0
    n_gt: int = 0
    unmatched_pred: int = 0
    unmatched_truth: int = 0
    notes: list = field(default_factory=list)

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def _mean(values) -> float:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return sum(vals) / len(vals) if vals else math.nan


@dataclass
class EvalReport:
    images: list = field(default_factory=list)

    def aggregate(self) -> dict:
        agg = {k: _mean(getattr(m, k) for m in self.images) for k in METRIC_FIELDS if k not in ("n_pred", "n_gt")}
        agg["n_pred"] = sum(m.n_pred for m in self.images)
        agg["n_gt"] = sum(m.n_gt for m in self.images)
        agg["count"] = len(self.images)
        return agg

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.images + other.images)


def evaluate(
    pred: PolygonSet,
    truth: PolygonSet,
    grid_dims: tuple[int, int] | None = None,
    config: EvalConfig | None = None,
    image: str = "",
) -> ImageMetrics:
    """Every metric for one image.

    Both sides are rasterized on the shared grid.  PoLiS averages over
    polygon pairs matched by overlap; metrics that cannot be computed are
    NaN with a note explaining why.
    """
    config = config or EvalConfig()
    width, height = grid_dims or truth.grid_dims
    if len(truth) == 0:
        raise ValueError("empty ground truth: n_ratio, c_iou, polis, scr and apls are undefined")
    out = ImageMetrics(image=image)
    m_t = rasterize(truth, width, height)
    m_p = rasterize(pred, width, height)
    out.iou = iou(m_t, m_p)
    d = config.band_width if config.band_width is not None else default_band_width(width, height)
    out.b_iou = boundary_iou(m_t, m_p, d)
    out.n_gt, out.n_pred = truth.num_vertices, pred.num_vertices
    out.n_ratio = out.n_pred / out.n_gt
    out.c_iou = c_iou(out.iou, out.n_gt, out.n_pred) if out.n_pred else 0.0

    if config.sf_params is not None:
        if len(pred):
            counts = np.array([p.num_vertices for p in pred])
            out.sf = float(np.mean(simplicity_factor(counts, config.sf_params)))
            out.s_iou = out.iou * out.sf
        else:
            out.notes.append("sf undefined: no predicted polygons")
            out.s_iou = 0.0
    else:
        out.notes.append("sf/s_iou not computed: no SF parameters")

    pairs = match_polygons(pred, truth, width, height)
    out.unmatched_pred = len(pred) - len(pairs)
    out.unmatched_truth = len(truth) - len(pairs)
    if pairs:
        out.polis = float(np.mean([polis(pred.polygons[p], truth.polygons[t]) for p, t in pairs]))
    else:
        out.notes.append("polis undefined: no overlapping polygon pairs")

    try:
        out.scr = scr(pred, truth, config.theta_turn)
    except ValueError as exc:
        out.notes.append(str(exc))

    try:
        out.apls = apls_from_masks(m_t, m_p, config.snap_radius, config.symmetric_apls)
    except ValueError as exc:
        out.notes.append(str(exc))
    return out


def report_rows(report: EvalReport) -> list[dict]:
    return [
        {"image": m.image, **m.metrics()} for m in report.images
    ]


def report_to_json(report: EvalReport) -> dict:
    images = []
    for m in report.images:
        rec = {"image": m.image, **m.metrics()}
        rec["matching"] = {"unmatched_pred": m.unmatched_pred, "unmatched_truth": m.unmatched_truth}
        if m.notes:
            rec["notes"] = list(m.notes)
        images.append(rec)
    return {"images": images, "aggregate": report.aggregate()}


def image_metrics_from_json(rec: dict) -> ImageMetrics:
    names = {f.name for f in fields(ImageMetrics)}
    kw = {k: (math.nan if v is None else v) for k, v in rec.items() if k in names and k != "notes"}
    m = ImageMetrics(**kw)
    match = rec.get("matching", {})
    m.unmatched_pred = match.get("unmatched_pred", 0)
    m.unmatched_truth = match.get("unmatched_truth", 0)
    m.notes = list(rec.get("notes", []))
    return m

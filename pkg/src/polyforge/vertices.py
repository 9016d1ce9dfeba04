"""Sparse vertex extraction from heatmaps and vertex-level precision/recall."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import PolygonSet, as_points


@dataclass(frozen=True)
class VertexSet:
    """Keypoints as an ``(m, 2)`` array of ``(x, y)`` plus per-point scores."""

    xy: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    scores: np.ndarray | None = None

    def __post_init__(self):
        xy = as_points(self.xy).copy()
        scores = np.ones(len(xy)) if self.scores is None else np.asarray(self.scores, dtype=np.float64).copy()
        if scores.shape != (len(xy),):
            raise ValueError("scores must have one entry per vertex")
        if not np.all(np.isfinite(xy)):
            raise ValueError("vertex coordinates must be finite")
        xy.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.xy)

    def translated(self, dx: float, dy: float) -> "VertexSet":
        return VertexSet(self.xy + (dx, dy), self.scores)

    @staticmethod
    def concat(sets) -> "VertexSet":
        sets = list(sets)
        if not sets:
            return VertexSet()
        return VertexSet(
            np.concatenate([s.xy for s in sets]), np.concatenate([s.scores for s in sets])
        )


def polygon_vertices(polygons: PolygonSet) -> VertexSet:
    """Every ring vertex of a polygon set, scored 1."""
    arrays = [r.points for r in polygons.rings()]
    return VertexSet(np.concatenate(arrays) if arrays else np.zeros((0, 2)))


def nms_peaks(heatmap, threshold: float = 0.3, window: int = 5) -> VertexSet:
    """Local maxima of a heatmap over a ``window`` x ``window`` neighbourhood.

    A pixel survives when it is at least ``threshold``, strictly greater than
    every neighbour that precedes it in row-major order and no smaller than
    the ones that follow, so plateaus keep their first pixel.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    h = np.asarray(heatmap, dtype=np.float64)
    rows, cols = h.shape
    half = window // 2
    padded = np.pad(h, half, mode="constant", constant_values=-np.inf)
    keep = h >= threshold
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[half + dr : half + dr + rows, half + dc : half + dc + cols]
            if (dr, dc) < (0, 0):
                keep &= h > nb
            else:
                keep &= h >= nb
            if not keep.any():
                return VertexSet()
    r, c = np.nonzero(keep)
    return VertexSet(np.column_stack([c, r]).astype(np.float64), h[r, c])


def _pairs_within(pred: np.ndarray, truth: np.ndarray, radius: float):
    tree = cKDTree(truth)
    dist = []
    for i, js in enumerate(tree.query_ball_point(pred, radius)):
        for j in js:
            d = float(np.hypot(*(pred[i] - truth[j])))
            if d <= radius:
                dist.append((d, i, j))
    return dist


def match_vertices(pred, truth, radius: float = 10.0, method: str = "optimal") -> list[tuple[int, int]]:
    """One-to-one matches ``(pred_index, truth_index)`` within ``radius``.

    ``optimal`` maximises the number of matches and, among maximum matchings,
    minimises total distance.  ``greedy`` takes pairs nearest-first.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    p = as_points(getattr(pred, "xy", pred))
    t = as_points(getattr(truth, "xy", truth))
    if len(p) == 0 or len(t) == 0:
        return []
    candidates = _pairs_within(p, t, radius)
    if not candidates:
        return []
    if method == "greedy":
        used_p, used_t, out = set(), set(), []
        for d, i, j in sorted(candidates):
            if i not in used_p and j not in used_t:
                used_p.add(i)
                used_t.add(j)
                out.append((i, j))
        return out
    if method != "optimal":
        raise ValueError(f"unknown matching method {method!r}")
    pi = sorted({i for _, i, _ in candidates})
    tj = sorted({j for _, _, j in candidates})
    pi_pos = {v: k for k, v in enumerate(pi)}
    tj_pos = {v: k for k, v in enumerate(tj)}
    # each feasible pair costs dist - big, which dominates: more matches always win
    big = radius * (min(len(pi), len(tj)) + 1) + 1.0
    cost = np.zeros((len(pi), len(tj)))
    for d, i, j in candidates:
        cost[pi_pos[i], tj_pos[j]] = d - big
    rows, cols = linear_sum_assignment(cost)
    return [(pi[r], tj[c]) for r, c in zip(rows, cols) if cost[r, c] < 0]


def vertex_pr(pred, truth, radius: float = 10.0, method: str = "optimal") -> tuple[float, float]:
    """Precision and recall of predicted vertices within ``radius`` pixels."""
    n_pred, n_truth = len(getattr(pred, "xy", pred)), len(getattr(truth, "xy", truth))
    if n_pred == 0 and n_truth == 0:
        return 1.0, 1.0
    matched = len(match_vertices(pred, truth, radius, method))
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_truth if n_truth else 0.0
    return precision, recall

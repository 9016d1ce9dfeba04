"""Average path length similarity on skeleton-derived road graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .raster import as_mask, skeletonize

# 8-neighbourhood offsets (dr, dc); diagonals last
_ORTHO = ((-1, 0), (0, -1), (0, 1), (1, 0))
_DIAG = ((-1, -1), (-1, 1), (1, -1), (1, 1))
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class RoadGraph:
    """Undirected weighted graph; node coordinates are ``(x, y)`` pixel centres.

    ``edges`` holds ``(i, j, length)`` with ``length`` in pixels; ``paths``
    optionally keeps the pixel polyline behind each edge.
    """

    nodes: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    edges: tuple = ()
    control: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    paths: tuple = ()

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "nodes", nodes)
        edges = tuple((int(i), int(j), float(w)) for i, j, w in self.edges)
        for i, j, w in edges:
            if not (0 <= i < len(nodes) and 0 <= j < len(nodes)):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
            if not w > 0:
                raise ValueError("edge lengths must be > 0")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "control", np.asarray(self.control, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "paths", tuple(self.paths))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self.nodes), dtype=np.int64)
        for i, j, _ in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> sparse.csr_matrix:
        best: dict[tuple[int, int], float] = {}
        for i, j, w in self.edges:
            if i == j:
                continue
            key = (min(i, j), max(i, j))
            if w < best.get(key, math.inf):
                best[key] = w
        n = len(self.nodes)
        if not best:
            return sparse.csr_matrix((n, n))
        (ii, jj), ww = zip(*best.keys()), list(best.values())
        ii, jj = np.array(ii), np.array(jj)
        return sparse.csr_matrix(
            (np.concatenate([ww, ww]), (np.concatenate([ii, jj]), np.concatenate([jj, ii]))), shape=(n, n)
        )

    def shortest_paths(self, sources) -> np.ndarray:
        """Dijkstra distances from ``sources`` to every node (inf if unreachable)."""
        sources = np.asarray(sources, dtype=np.int64)
        if len(sources) == 0:
            return np.zeros((0, len(self.nodes)))
        return np.atleast_2d(dijkstra(self.adjacency(), directed=False, indices=sources))

    def total_length(self) -> float:
        return float(sum(w for _, _, w in self.edges))

    def scaled(self, s: float) -> "RoadGraph":
        return RoadGraph(
            self.nodes * s,
            tuple((i, j, w * s) for i, j, w in self.edges),
            self.control,
            tuple(np.asarray(p) * s for p in self.paths),
        )

    def without_edge(self, k: int) -> "RoadGraph":
        keep = [e for n, e in enumerate(self.edges) if n != k]
        paths = [p for n, p in enumerate(self.paths) if n != k] if self.paths else ()
        return RoadGraph(self.nodes, tuple(keep), self.control, tuple(paths))


def _neighbour_table(skel: np.ndarray):
    """Mixed-adjacency neighbours: diagonals only where no 4-path connects them."""
    h, w = skel.shape
    pad = np.pad(skel, 1)

    def at(dr, dc):
        return pad[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    links = {}
    for dr, dc in _ORTHO:
        links[(dr, dc)] = skel & at(dr, dc)
    for dr, dc in _DIAG:
        links[(dr, dc)] = skel & at(dr, dc) & ~at(dr, 0) & ~at(0, dc)
    degree = sum(v.astype(np.int64) for v in links.values())
    return links, degree


def skeleton_to_graph(skeleton) -> RoadGraph:
    """Collapse a one-pixel-wide skeleton into a graph of endpoints and junctions.

    Pixels are linked by mixed adjacency (a diagonal step only where no
    orthogonal two-step path exists).  Adjacent junction pixels merge into one
    node placed at the member pixel nearest their centroid.  Chains of
    degree-2 pixels become edges whose length is the summed step length plus
    the offsets from merged junction pixels to their node.  A pure loop gets
    its first pixel (row-major) as an anchor node with a self-loop edge.
    """
    skel = as_mask(skeleton)
    links, degree = _neighbour_table(skel)
    rows, cols = np.nonzero(skel)
    if len(rows) == 0:
        return RoadGraph()
    pix_id = -np.ones(skel.shape, dtype=np.int64)
    pix_id[rows, cols] = np.arange(len(rows))
    nbr_lists = [[] for _ in range(len(rows))]
    for (dr, dc), lk in links.items():
        rr, cc = np.nonzero(lk)
        src = pix_id[rr, cc]
        dst = pix_id[rr + dr, cc + dc]
        for s, d in zip(src.tolist(), dst.tolist()):
            nbr_lists[s].append(d)
    deg = degree[rows, cols]

    # node assignment
    node_of = -np.ones(len(rows), dtype=np.int64)
    node_xy: list[tuple[float, float]] = []
    for p in np.flatnonzero(deg != 2).tolist():
        if node_of[p] != -1:
            continue
        if deg[p] < 3:
            node_of[p] = len(node_xy)
            node_xy.append((float(cols[p]), float(rows[p])))
            continue
        # flood the junction cluster
        cluster, stack = [], [p]
        node_of[p] = len(node_xy)
        while stack:
            q = stack.pop()
            cluster.append(q)
            for r in nbr_lists[q]:
                if deg[r] >= 3 and node_of[r] == -1:
                    node_of[r] = node_of[p]
                    stack.append(r)
        cy, cx = rows[cluster].mean(), cols[cluster].mean()
        rep = min(cluster, key=lambda q: ((rows[q] - cy) ** 2 + (cols[q] - cx) ** 2, q))
        node_xy.append((float(cols[rep]), float(rows[rep])))

    def step(a, b):
        return SQRT2 if (rows[a] != rows[b] and cols[a] != cols[b]) else 1.0

    def rep_offset(p):
        n = node_of[p]
        return math.hypot(node_xy[n][0] - cols[p], node_xy[n][1] - rows[p])

    edges, paths = [], []
    visited = np.zeros(len(rows), dtype=bool)
    seen_direct = set()

    def walk(start, first):
        length = rep_offset(start) + step(start, first)
        path = [start, first]
        prev, cur = start, first
        while node_of[cur] == -1:
            visited[cur] = True
            nxt = [r for r in nbr_lists[cur] if r != prev]
            if not nxt:  # dangling chain (cannot happen for degree 2)
                break
            nxt = nxt[0]
            length += step(cur, nxt)
            path.append(nxt)
            prev, cur = cur, nxt
            if cur == start:
                break
        if node_of[cur] != -1:
            length += rep_offset(cur)
        return cur, length, path

    for p in np.flatnonzero(node_of != -1).tolist():
        for q in nbr_lists[p]:
            if node_of[q] == node_of[p]:
                continue
            if node_of[q] != -1:
                key = (min(p, q), max(p, q))
                if key in seen_direct:
                    continue
                seen_direct.add(key)
                end, length, path = q, rep_offset(p) + step(p, q) + rep_offset(q), [p, q]
            else:
                if visited[q]:
                    continue
                end, length, path = walk(p, q)
            edges.append((int(node_of[p]), int(node_of[end]), length))
            paths.append(np.column_stack([cols[path], rows[path]]).astype(np.float64))

    # pure loops: no endpoint or junction at all
    for p in np.flatnonzero((node_of == -1) & ~visited).tolist():
        if visited[p]:
            continue
        node_of[p] = len(node_xy)
        node_xy.append((float(cols[p]), float(rows[p])))
        visited[p] = True
        end, length, path = walk(p, nbr_lists[p][0])
        edges.append((int(node_of[p]), int(node_of[end]), length))
        paths.append(np.column_stack([cols[path], rows[path]]).astype(np.float64))

    control = np.arange(len(node_xy))
    return RoadGraph(np.array(node_xy), tuple(edges), control, tuple(paths))


def graph_from_mask(mask) -> RoadGraph:
    return skeleton_to_graph(skeletonize(mask))


def match_nodes(truth: RoadGraph, pred: RoadGraph, snap_radius: float = 25.0) -> dict[int, int | None]:
    """Map each truth control node to its nearest pred node within ``snap_radius``."""
    if snap_radius <= 0:
        raise ValueError("snap_radius must be > 0")
    out: dict[int, int | None] = {int(c): None for c in truth.control}
    if pred.num_nodes == 0 or not out:
        return out
    ctrl = truth.control
    dist, idx = cKDTree(pred.nodes).query(truth.nodes[ctrl])
    for c, d, i in zip(ctrl.tolist(), np.atleast_1d(dist).tolist(), np.atleast_1d(idx).tolist()):
        out[c] = int(i) if d <= snap_radius else None
    return out


def _apls_one_way(truth: RoadGraph, pred: RoadGraph, snap_radius: float) -> float:
    ctrl = truth.control
    if len(ctrl) < 2:
        raise ValueError("APLS undefined: fewer than 2 control nodes in ground truth")
    d_truth = truth.shortest_paths(ctrl)[:, ctrl]
    match = match_nodes(truth, pred, snap_radius)
    targets = sorted({v for v in match.values() if v is not None})
    pos = {v: k for k, v in enumerate(targets)}
    d_pred = pred.shortest_paths(targets)[:, targets] if targets else np.zeros((0, 0))
    terms = []
    for a in range(len(ctrl)):
        for b in range(a + 1, len(ctrl)):
            d = d_truth[a, b]
            if not np.isfinite(d) or d <= 0:
                continue
            ma, mb = match[int(ctrl[a])], match[int(ctrl[b])]
            if ma is None or mb is None:
                terms.append(1.0)
                continue
            dp = d_pred[pos[ma], pos[mb]]
            terms.append(1.0 if not np.isfinite(dp) else min(abs(d - dp) / d, 1.0))
    if not terms:
        raise ValueError("APLS undefined: no connected control-node pairs in ground truth")
    return 1.0 - float(np.mean(terms))


def apls_score(truth: RoadGraph, pred: RoadGraph, snap_radius: float = 25.0, symmetric: bool = False) -> float:
    """Path-length similarity of truth control-node pairs against the prediction.

    Pairs disconnected in the truth are skipped; a pair whose endpoints do
    not snap to the prediction, or are disconnected there, scores zero.
    With ``symmetric`` the score is averaged with the reverse direction
    (0 when the prediction has no evaluable pairs).
    """
    forward = _apls_one_way(truth, pred, snap_radius)
    if not symmetric:
        return forward
    try:
        backward = _apls_one_way(pred, truth, snap_radius)
    except ValueError:
        backward = 0.0
    return 0.5 * (forward + backward)


def apls_from_masks(truth_mask, pred_mask, snap_radius: float = 25.0, symmetric: bool = False) -> float:
    return apls_score(graph_from_mask(truth_mask), graph_from_mask(pred_mask), snap_radius, symmetric)

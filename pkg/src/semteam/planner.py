"""Incremental global planner over the aerial semantic map.

Traversability comes from the road/dirt classes with a morphological close;
the roadmap is grown deterministically by repeatedly placing nodes at the
highest-clearance cell not yet visible to the graph, until every free cell
sees at least one node. Edge weights trade distance against clearance with
the printed heuristic W = lambda*|u-v| + [m^2 + sqrt(m)], m = min clearance
along the edge (an inverse clearance penalty is available as a config
switch, since the printed form makes low-clearance edges cheaper).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import distance_transform_edt

from semteam.geometry import segment_free, segment_min_value, visible_from
from semteam.world import SemanticClass, SemanticGridMap, traversable_mask


@dataclass
class TraversabilityGrid:
    """Free/obstacle mask derived from one map version (unknown = obstacle)."""

    free: np.ndarray
    unknown: np.ndarray
    resolution: float
    origin_x: float
    origin_y: float
    source_version: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.free.shape


@dataclass
class DistanceField:
    """Euclidean distance (meters) to the nearest obstacle cell; 0 on obstacles."""

    dist: np.ndarray
    resolution: float
    sentinel: float


def extract_traversability(grid_map: SemanticGridMap, close_radius: int) -> TraversabilityGrid:
    """Traversable-class mask, holes filled with a morphological close.

    The closing uses a Euclidean disc of ``close_radius`` cells. Cells
    outside the grid are ignored by the structuring element (rather than
    treated as background), which keeps the close extensive and idempotent
    on the finite grid.
    """
    if grid_map.version < 1:
        raise ValueError("map version must be >= 1")
    free0 = traversable_mask(grid_map.classes)
    unknown = grid_map.classes == SemanticClass.UNKNOWN
    free = _close(free0, close_radius)
    return TraversabilityGrid(
        free=free,
        unknown=np.asarray(unknown),
        resolution=grid_map.resolution,
        origin_x=grid_map.origin_x,
        origin_y=grid_map.origin_y,
        source_version=grid_map.version,
    )


def _close(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0 or not mask.any() or mask.all():
        return mask.copy()
    dist_to_free = distance_transform_edt(~mask)
    dilated = dist_to_free <= radius
    if dilated.all():
        return dilated
    dist_to_bg = distance_transform_edt(dilated)
    return dist_to_bg > radius


def distance_transform(grid: TraversabilityGrid) -> DistanceField:
    """Exact Euclidean distance to the nearest obstacle cell, in meters.

    With no obstacles at all, every cell carries the finite sentinel
    (width + height) * resolution so downstream arithmetic stays total.
    """
    h, w = grid.shape
    sentinel = (w + h) * grid.resolution
    obstacles = ~grid.free
    if not obstacles.any():
        dist = np.full((h, w), sentinel)
    else:
        dist = distance_transform_edt(grid.free) * grid.resolution
    return DistanceField(dist=dist, resolution=grid.resolution, sentinel=sentinel)


def edge_weight(
    u: tuple[int, int],
    v: tuple[int, int],
    field: DistanceField,
    lam: float = 1.0,
    penalty: str = "verbatim",
) -> float:
    """Distance/clearance edge weight; assumes the segment is obstacle-free."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    m = segment_min_value(u, v, field.dist)
    length = math.hypot(u[0] - v[0], u[1] - v[1]) * field.resolution
    return lam * length + clearance_penalty(m, penalty)


def clearance_penalty(m: float, penalty: str = "verbatim") -> float:
    if penalty == "verbatim":
        return m * m + math.sqrt(m)
    if penalty == "inverse":
        if m == 0.0:
            return math.inf
        return 1.0 / (m * m) + 1.0 / math.sqrt(m)
    raise ValueError(f"unknown clearance penalty {penalty!r}")


class VisibilityMap:
    """Which roadmap nodes each cell can see within radius R (and vice versa)."""

    def __init__(self, width: int, height: int) -> None:
        self.width = width
        self.height = height
        self.node_cells: dict[int, set[int]] = {}
        self.cover = np.zeros((height, width), dtype=np.int32)

    def flat(self, cell: tuple[int, int]) -> int:
        return cell[1] * self.width + cell[0]

    def nodes_visible_from(self, cell: tuple[int, int]) -> list[int]:
        f = self.flat(cell)
        return [nid for nid, cells in self.node_cells.items() if f in cells]

    def add_node_region(self, nid: int, flats: set[int]) -> None:
        self.node_cells[nid] = flats
        if flats:
            idx = np.fromiter(flats, dtype=np.int64, count=len(flats))
            np.add.at(self.cover.reshape(-1), idx, 1)

    def remove_node(self, nid: int) -> None:
        flats = self.node_cells.pop(nid, set())
        if flats:
            idx = np.fromiter(flats, dtype=np.int64, count=len(flats))
            np.add.at(self.cover.reshape(-1), idx, -1)

    def discard_cells(self, nid: int, flats: set[int]) -> None:
        gone = self.node_cells[nid] & flats
        if gone:
            self.node_cells[nid] -= gone
            idx = np.fromiter(gone, dtype=np.int64, count=len(gone))
            np.add.at(self.cover.reshape(-1), idx, -1)


class Roadmap:
    """Spatial graph of high-clearance nodes and obstacle-free edges."""

    def __init__(self, radius: float, lam: float = 1.0, penalty: str = "verbatim") -> None:
        if radius <= 0:
            raise ValueError("radius must be > 0")
        self.radius = radius
        self.lam = lam
        self.penalty = penalty
        self.nodes: dict[int, tuple[int, int]] = {}
        self.edges: dict[tuple[int, int], tuple[float, float]] = {}
        self.adj: dict[int, set[int]] = {}
        self.generation = 0
        self._next_id = 0
        self._prev_free: np.ndarray | None = None

    def edge_key(self, a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    def neighbors(self, nid: int):
        return self.adj.get(nid, set())

    def components(self) -> dict[int, int]:
        parent = {nid: nid for nid in self.nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        return {nid: find(nid) for nid in self.nodes}


def update_roadmap(
    roadmap: Roadmap,
    vis: VisibilityMap | None,
    grid: TraversabilityGrid,
    field: DistanceField,
) -> tuple[Roadmap, VisibilityMap]:
    """Grow the roadmap for a new map version.

    Nodes are retained across versions; only newly free cells trigger
    additions. Cells flipping free -> obstacle (rare class rewrites)
    invalidate the visibility entries and edges crossing them.
    """
    free = grid.free
    h, w = free.shape
    if vis is None or vis.width != w or vis.height != h:
        vis = VisibilityMap(w, h)
    res = grid.resolution
    r_cells = roadmap.radius / res

    prev = roadmap._prev_free
    newly_free = free.copy() if prev is None else (free & ~prev)
    now_blocked = np.zeros_like(free) if prev is None else (prev & ~free)

    # drop nodes whose cell is no longer free
    for nid in [n for n, (ix, iy) in roadmap.nodes.items() if not free[iy, ix]]:
        _remove_node(roadmap, vis, nid)

    if now_blocked.any():
        _revalidate_against(roadmap, vis, grid, now_blocked)

    # newly free cells may already see existing nodes
    if newly_free.any() and roadmap.nodes:
        nf_iy, nf_ix = np.nonzero(newly_free)
        for nid, (nx, ny) in roadmap.nodes.items():
            d2 = (nf_ix - nx) ** 2 + (nf_iy - ny) ** 2
            sel = d2 <= r_cells**2
            if not sel.any():
                continue
            cand_ix, cand_iy = nf_ix[sel], nf_iy[sel]
            ob_ix, ob_iy = _window_obstacles(free, (nx, ny), cand_ix, cand_iy)
            seen = visible_from((nx, ny), cand_ix, cand_iy, ob_ix, ob_iy)
            flats = {int(iy_ * w + ix_) for ix_, iy_ in zip(cand_ix[seen], cand_iy[seen])}
            new = flats - vis.node_cells[nid]
            if new:
                vis.node_cells[nid] |= new
                idx = np.fromiter(new, dtype=np.int64, count=len(new))
                np.add.at(vis.cover.reshape(-1), idx, 1)

    # cover every free cell: place nodes at the clearance maxima
    uncovered = free & (vis.cover == 0)
    while uncovered.any():
        flat = int(np.argmax(np.where(uncovered, field.dist, -np.inf)))
        cell = (flat % w, flat // w)
        _add_node(roadmap, vis, grid, cell, r_cells)
        uncovered = free & (vis.cover == 0)

    # Bridge node pairs with overlapping visibility but no path between
    # them. "No path" is taken locally: a pair needs an edge or a common
    # neighbor, otherwise two nodes covering the same corridor can end up
    # connected only the long way around the map.
    occupied = {c for c in roadmap.nodes.values()}
    while True:
        bridged = False
        ids = sorted(roadmap.nodes)
        pos = {nid: roadmap.nodes[nid] for nid in ids}
        for i, a in enumerate(ids):
            ax, ay = pos[a]
            for b in ids[i + 1 :]:
                bx, by = pos[b]
                if (ax - bx) ** 2 + (ay - by) ** 2 > (2 * r_cells) ** 2:
                    continue
                if b in roadmap.adj[a] or (roadmap.adj[a] & roadmap.adj[b]):
                    continue
                overlap = vis.node_cells[a] & vis.node_cells[b]
                if not overlap:
                    continue
                cells = np.fromiter(overlap, dtype=np.int64, count=len(overlap))
                cells.sort()
                order = np.argsort(-field.dist.reshape(-1)[cells], kind="stable")
                best = None
                for k in order:
                    cell = (int(cells[k]) % w, int(cells[k]) // w)
                    if cell not in occupied:
                        best = cell
                        break
                if best is None:
                    continue
                _add_node(roadmap, vis, grid, best, r_cells)
                occupied.add(best)
                bridged = True
                break
            if bridged:
                break
        if not bridged:
            break

    # refresh every edge weight from the current field
    for key in roadmap.edges:
        ua, ub = roadmap.nodes[key[0]], roadmap.nodes[key[1]]
        m = segment_min_value(ua, ub, field.dist)
        roadmap.edges[key] = (
            roadmap.lam * math.hypot(ua[0] - ub[0], ua[1] - ub[1]) * res
            + clearance_penalty(m, roadmap.penalty),
            m,
        )

    roadmap.generation += 1
    roadmap._prev_free = free.copy()
    return roadmap, vis


def _window_obstacles(free, node, cand_ix, cand_iy):
    """Blocking-relevant obstacle cells in the bounding box of the node and
    candidates. A segment that reaches an obstacle blob's interior must
    first touch a blob boundary cell, so only obstacle cells with a free
    8-neighbor (or on the window rim) are needed for exact blocking tests.
    """
    nx, ny = node
    x_lo = min(int(cand_ix.min()), nx)
    x_hi = max(int(cand_ix.max()), nx)
    y_lo = min(int(cand_iy.min()), ny)
    y_hi = max(int(cand_iy.max()), ny)
    sub_free = free[y_lo : y_hi + 1, x_lo : x_hi + 1]
    obst = ~sub_free
    near_free = np.zeros_like(obst)
    near_free[1:-1, 1:-1] = (
        sub_free[:-2, :-2] | sub_free[:-2, 1:-1] | sub_free[:-2, 2:]
        | sub_free[1:-1, :-2] | sub_free[1:-1, 2:]
        | sub_free[2:, :-2] | sub_free[2:, 1:-1] | sub_free[2:, 2:]
    )
    near_free[0, :] = near_free[-1, :] = True
    near_free[:, 0] = near_free[:, -1] = True
    oy, ox = np.nonzero(obst & near_free)
    return ox + x_lo, oy + y_lo


def _add_node(roadmap: Roadmap, vis: VisibilityMap, grid: TraversabilityGrid, cell, r_cells) -> int:
    free = grid.free
    h, w = free.shape
    nx, ny = cell
    nid = roadmap._next_id
    roadmap._next_id += 1
    roadmap.nodes[nid] = (nx, ny)
    roadmap.adj[nid] = set()

    x_lo = max(0, int(math.floor(nx - r_cells)))
    x_hi = min(w - 1, int(math.ceil(nx + r_cells)))
    y_lo = max(0, int(math.floor(ny - r_cells)))
    y_hi = min(h - 1, int(math.ceil(ny + r_cells)))
    sub = free[y_lo : y_hi + 1, x_lo : x_hi + 1]
    cy, cx = np.nonzero(sub)
    cand_ix, cand_iy = cx + x_lo, cy + y_lo
    in_disc = (cand_ix - nx) ** 2 + (cand_iy - ny) ** 2 <= r_cells**2
    cand_ix, cand_iy = cand_ix[in_disc], cand_iy[in_disc]
    ob_ix, ob_iy = _window_obstacles(free, (nx, ny), cand_ix, cand_iy)
    seen = visible_from((nx, ny), cand_ix, cand_iy, ob_ix, ob_iy)
    flats = {int(iy_ * w + ix_) for ix_, iy_ in zip(cand_ix[seen], cand_iy[seen])}
    vis.add_node_region(nid, flats)

    for other, (ox, oy) in roadmap.nodes.items():
        if other == nid:
            continue
        if (ox - nx) ** 2 + (oy - ny) ** 2 > r_cells**2:
            continue
        if segment_free((nx, ny), (ox, oy), free):
            roadmap.edges[roadmap.edge_key(nid, other)] = (0.0, 0.0)
            roadmap.adj[nid].add(other)
            roadmap.adj[other].add(nid)
    return nid


def _remove_node(roadmap: Roadmap, vis: VisibilityMap, nid: int) -> None:
    roadmap.nodes.pop(nid)
    vis.remove_node(nid)
    for other in roadmap.adj.pop(nid, set()):
        roadmap.adj[other].discard(nid)
        roadmap.edges.pop(roadmap.edge_key(nid, other), None)


def _revalidate_against(roadmap, vis, grid, now_blocked):
    """Remove visibility entries and edges crossed by newly blocked cells."""
    w = grid.shape[1]
    ob_iy, ob_ix = np.nonzero(now_blocked)
    blocked_flats = {int(iy * w + ix) for ix, iy in zip(ob_ix, ob_iy)}
    for nid, cell in roadmap.nodes.items():
        vis.discard_cells(nid, blocked_flats)
        cells = vis.node_cells[nid]
        if not cells:
            continue
        arr = np.fromiter(cells, dtype=np.int64, count=len(cells))
        cand_ix, cand_iy = arr % w, arr // w
        still = visible_from(cell, cand_ix, cand_iy, ob_ix, ob_iy)
        gone = {int(f) for f in arr[~still]}
        vis.discard_cells(nid, gone)
    for key in list(roadmap.edges):
        ua, ub = roadmap.nodes[key[0]], roadmap.nodes[key[1]]
        if not segment_free(ua, ub, grid.free):
            roadmap.edges.pop(key)
            roadmap.adj[key[0]].discard(key[1])
            roadmap.adj[key[1]].discard(key[0])


# ---------------------------------------------------------------------------
# queries


@dataclass
class PlanResult:
    ok: bool
    waypoints: list[tuple[int, int]] = dc_field(default_factory=list)
    cost: float = 0.0
    min_clearance: float = math.inf
    reason: str | None = None  # "unmapped" | "unreachable" on failure


def plan(
    roadmap: Roadmap,
    vis: VisibilityMap,
    grid: TraversabilityGrid,
    field: DistanceField,
    start: tuple[int, int],
    goal: tuple[int, int],
) -> PlanResult:
    """Least-weight roadmap route from start to goal, pruned.

    Failure reasons: "unmapped" when an endpoint lies on unknown cells,
    "unreachable" when it is a known obstacle or no graph path exists.
    """
    h, w = grid.shape
    for name, (ix, iy) in (("start", start), ("goal", goal)):
        if not (0 <= ix < w and 0 <= iy < h):
            raise ValueError(f"{name} {ix, iy} outside map bounds")
    for ix, iy in (start, goal):
        if not grid.free[iy, ix]:
            reason = "unmapped" if grid.unknown[iy, ix] else "unreachable"
            return PlanResult(ok=False, reason=reason)
    if start == goal:
        return PlanResult(ok=True, waypoints=[start], cost=0.0)

    start_nodes = vis.nodes_visible_from(start)
    goal_nodes = set(vis.nodes_visible_from(goal))
    if not start_nodes or not goal_nodes:
        return PlanResult(ok=False, reason="unreachable")

    def w_of(u, v):
        return edge_weight(u, v, field, roadmap.lam, roadmap.penalty)

    # Dijkstra over the roadmap plus virtual start/goal connectors
    dist: dict[int, float] = {}
    prev: dict[int, int | None] = {}
    counter = 0
    heap: list[tuple[float, int, int]] = []
    for nid in start_nodes:
        d = w_of(start, roadmap.nodes[nid])
        if d < dist.get(nid, math.inf):
            dist[nid] = d
            prev[nid] = None
            heapq.heappush(heap, (d, counter, nid))
            counter += 1
    best_goal: tuple[float, int] | None = None
    done: set[int] = set()
    while heap:
        d, _, nid = heapq.heappop(heap)
        if nid in done or d > dist.get(nid, math.inf):
            continue
        done.add(nid)
        if nid in goal_nodes:
            total = d + w_of(roadmap.nodes[nid], goal)
            if best_goal is None or total < best_goal[0]:
                best_goal = (total, nid)
        for other in roadmap.neighbors(nid):
            weight, _ = roadmap.edges[roadmap.edge_key(nid, other)]
            nd = d + weight
            if nd < dist.get(other, math.inf):
                dist[other] = nd
                prev[other] = nid
                heapq.heappush(heap, (nd, counter, other))
                counter += 1
    if best_goal is None:
        return PlanResult(ok=False, reason="unreachable")

    chain: list[int] = []
    at: int | None = best_goal[1]
    while at is not None:
        chain.append(at)
        at = prev[at]
    chain.reverse()
    waypoints = [start] + [roadmap.nodes[n] for n in chain] + [goal]
    out: list[tuple[int, int]] = [waypoints[0]]
    for p in waypoints[1:]:
        if p != out[-1]:
            out.append(p)
    waypoints = out

    # prune: drop a waypoint when a direct clear edge is no more expensive
    changed = True
    while changed and len(waypoints) > 2:
        changed = False
        for i in range(1, len(waypoints) - 1):
            a, mid, b = waypoints[i - 1], waypoints[i], waypoints[i + 1]
            if segment_free(a, b, grid.free) and w_of(a, b) <= w_of(a, mid) + w_of(mid, b):
                del waypoints[i]
                changed = True
                break

    cost = 0.0
    clearance = math.inf
    for a, b in zip(waypoints, waypoints[1:]):
        cost += w_of(a, b)
        clearance = min(clearance, segment_min_value(a, b, field.dist))
    return PlanResult(ok=True, waypoints=waypoints, cost=cost, min_clearance=clearance)

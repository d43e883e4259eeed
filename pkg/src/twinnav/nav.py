"""Event-triggered cooperative route planning over journey-time matrices.

Planning always happens on a matrix that already has event closures masked in:
columns into flagged nodes and flagged links are +inf, so returned routes
cannot enter a flagged node (they may depart from one) or use a flagged link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappush, heappop
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DegenerateRouteRequest

INF = math.inf

# Route-request geometry/time coefficient: 1/(2 * 3.048 m/s^2), the ITE
# comfortable-deceleration bound of 10 ft/s^2, rounded to three digits.
# Request distance is COEF * v^2 meters; the matching service deadline for a
# vehicle approaching at v is COEF * v seconds.
REQUEST_COEF = 0.164


@dataclass
class Route:
    """Planned node sequence for one vehicle; cursor indexes the next node to
    reach (so the vehicle is traversing nodes[cursor-1] -> nodes[cursor])."""

    nodes: list[int]
    vehicle_id: int | str | None = None
    cursor: int = 1

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ContractError("a route needs at least two nodes")
        if not 1 <= self.cursor < len(self.nodes):
            raise ContractError(
                f"cursor {self.cursor} out of range for {len(self.nodes)} nodes"
            )

    @property
    def destination(self) -> int:
        return self.nodes[-1]

    @property
    def next_node(self) -> int:
        return self.nodes[self.cursor]

    def remaining_links(self) -> list[tuple[int, int]]:
        """Links still ahead of the next decision point (the current link's
        downstream node); the link being traversed cannot be abandoned."""
        return list(zip(self.nodes[self.cursor:], self.nodes[self.cursor + 1:]))


@dataclass(frozen=True)
class PathResult:
    nodes: tuple[int, ...]
    cost: float


@dataclass
class PlanningInput:
    """Snapshot handed to the planner: an event-masked journey-time matrix and
    the users waiting for an initial route."""

    matrix: object  # (M+1, M+1) array or nested sequence, id-indexed
    new_users: dict = field(default_factory=dict)  # vid -> (position, destination)
    out_neighbors: Sequence[Sequence[int]] | None = None


@dataclass
class PlanOutcome:
    routes: dict = field(default_factory=dict)  # vid -> Route
    unreachable: set = field(default_factory=set)


def dijkstra_fastest(
    matrix,
    start: int,
    end: int,
    out_neighbors: Sequence[Sequence[int]] | None = None,
) -> PathResult | None:
    """Minimum-total-weight node sequence from start to end, or None when every
    path is +inf. Ties break deterministically: the frontier pops by
    (cost, node id) and equal-cost predecessors prefer the lower node id.
    """
    if start == end:
        raise DegenerateRouteRequest(f"start and destination are both {start}")
    rows = matrix
    n_ids = len(rows) - 1
    if not (1 <= start <= n_ids and 1 <= end <= n_ids):
        raise ContractError(f"node ids must be in 1..{n_ids}")

    dist = [INF] * (n_ids + 1)
    pred = [0] * (n_ids + 1)
    done = [False] * (n_ids + 1)
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, u = heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == end:
            break
        row = rows[u]
        neighbors = out_neighbors[u] if out_neighbors is not None else range(1, n_ids + 1)
        for v in neighbors:
            if done[v]:
                continue
            w = row[v]
            if w == INF:
                continue
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heappush(heap, (nd, v))
            elif nd == dist[v] and u < pred[v]:
                pred[v] = u
    if dist[end] == INF:
        return None
    path = [end]
    while path[-1] != start:
        path.append(pred[path[-1]])
    path.reverse()
    return PathResult(nodes=tuple(path), cost=dist[end])


def shortest_path_tree(
    matrix,
    origin: int,
    out_neighbors: Sequence[Sequence[int]] | None = None,
) -> tuple[list[float], list[int]]:
    """Single-source distances and predecessors, same tie-breaking as
    dijkstra_fastest; useful for caching routes from a common origin."""
    rows = matrix
    n_ids = len(rows) - 1
    dist = [INF] * (n_ids + 1)
    pred = [0] * (n_ids + 1)
    done = [False] * (n_ids + 1)
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    while heap:
        d, u = heappop(heap)
        if done[u]:
            continue
        done[u] = True
        row = rows[u]
        neighbors = out_neighbors[u] if out_neighbors is not None else range(1, n_ids + 1)
        for v in neighbors:
            if done[v]:
                continue
            w = row[v]
            if w == INF:
                continue
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heappush(heap, (nd, v))
            elif nd == dist[v] and u < pred[v]:
                pred[v] = u
    return dist, pred


def tree_path(pred: list[int], origin: int, dest: int) -> list[int]:
    """Node sequence origin..dest out of a predecessor array."""
    path = [dest]
    while path[-1] != origin:
        path.append(pred[path[-1]])
    path.reverse()
    return path


def mask_events(
    matrix: np.ndarray,
    event_nodes: set[int],
    event_links: set[tuple[int, int]],
) -> np.ndarray:
    """Copy of the matrix with every link into a flagged node and every flagged
    link set to +inf. Idempotent."""
    masked = np.array(matrix, dtype=float, copy=True)
    if event_nodes:
        masked[:, sorted(event_nodes)] = INF
    for i, j in event_links:
        masked[i, j] = INF
    return masked


def plan_new_users(inp: PlanningInput) -> PlanOutcome:
    """Initial fastest routes for entering users; users with no finite path are
    flagged unreachable and left unrouted."""
    out = PlanOutcome()
    for vid in sorted(inp.new_users):
        position, destination = inp.new_users[vid]
        found = dijkstra_fastest(inp.matrix, position, destination, inp.out_neighbors)
        if found is None:
            out.unreachable.add(vid)
        else:
            out.routes[vid] = Route(nodes=list(found.nodes), vehicle_id=vid)
    return out


def replan_affected(
    inp: PlanningInput, routes: Mapping[int | str, Route]
) -> PlanOutcome:
    """Re-plan exactly the users whose remaining route crosses a masked entry.

    The new route starts at the current link's downstream node (decisions take
    effect at the next intersection). Users whose destination became
    unreachable are flagged and keep their old route.
    """
    rows = inp.matrix
    out = PlanOutcome()
    for vid in sorted(routes):
        route = routes[vid]
        if not any(rows[a][b] == INF for a, b in route.remaining_links()):
            continue
        start = route.next_node
        destination = route.destination
        if start == destination:
            continue  # only the committed final link remains
        found = dijkstra_fastest(rows, start, destination, inp.out_neighbors)
        if found is None:
            out.unreachable.add(vid)
        else:
            out.routes[vid] = Route(nodes=list(found.nodes), vehicle_id=vid)
    return out


def spliced_route(old: Route, replanned: Route) -> Route:
    """Merge a re-plan into the traveled prefix: history up to the current link
    stays, the future follows the new plan from the downstream node."""
    if replanned.nodes[0] != old.next_node:
        raise ContractError(
            f"replanned route starts at {replanned.nodes[0]}, "
            f"expected {old.next_node}"
        )
    nodes = old.nodes[: old.cursor] + list(replanned.nodes)
    return Route(nodes=nodes, vehicle_id=old.vehicle_id, cursor=old.cursor)


def request_distance(v_free_mps: float) -> float:
    """Distance before an intersection at which a vehicle must request its
    route, in meters: the comfortable-braking distance from v_free."""
    if v_free_mps < 0:
        raise ContractError("speed must be non-negative")
    return REQUEST_COEF * v_free_mps * v_free_mps

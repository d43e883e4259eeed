"""Road network model: directed links, density/speed/journey-time laws, journey matrix.

Node ids are dense integers 1..M. Journey matrices are (M+1, M+1) float arrays
indexed directly by node id (row/column 0 unused, kept at +inf); entry (i, j)
is the traversal time in seconds of link i->j, or +inf when there is no such
link or the link is effectively closed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

INF = math.inf

# Links whose journey speed falls at or below this floor behave as closed:
# avoids division by ~0 and makes jammed links look like +inf to the planner.
SPEED_FLOOR_MPS = 1e-6


@dataclass(frozen=True)
class Node:
    node_id: int
    x_m: float
    y_m: float


@dataclass(frozen=True)
class Link:
    from_node: int
    to_node: int
    length_m: float
    v_free_mps: float
    k_max_veh_per_m: float

    @property
    def pair(self) -> tuple[int, int]:
        return (self.from_node, self.to_node)


class TrafficNetwork:
    """Immutable directed road graph with per-link arrays for vectorized math."""

    def __init__(self, nodes: list[Node], links: list[Link]):
        _validate_topology(nodes, links)
        self.nodes = list(nodes)
        self.links = list(links)
        self.node_count = len(nodes)
        self.link_count = len(links)
        self.node_by_id = {n.node_id: n for n in nodes}

        self.lengths = np.array([l.length_m for l in links], dtype=float)
        self.v_free = np.array([l.v_free_mps for l in links], dtype=float)
        self.k_max = np.array([l.k_max_veh_per_m for l in links], dtype=float)
        self.from_ids = np.array([l.from_node for l in links], dtype=int)
        self.to_ids = np.array([l.to_node for l in links], dtype=int)

        self.link_index: dict[tuple[int, int], int] = {
            l.pair: i for i, l in enumerate(links)
        }
        self.out_links: list[list[int]] = [[] for _ in range(self.node_count + 1)]
        self.in_links: list[list[int]] = [[] for _ in range(self.node_count + 1)]
        for i, l in enumerate(links):
            self.out_links[l.from_node].append(i)
            self.in_links[l.to_node].append(i)
        # Neighbor ids for Dijkstra; sorted so equal-cost scans are id-ordered.
        self.out_neighbors: list[list[int]] = [
            sorted(links[i].to_node for i in outs) for outs in self.out_links
        ]
        self._reach_cache: dict[int, frozenset[int]] = {}

    def link_between(self, from_node: int, to_node: int) -> Link | None:
        idx = self.link_index.get((from_node, to_node))
        return self.links[idx] if idx is not None else None

    def node_distance_m(self, a: int, b: int) -> float:
        na, nb = self.node_by_id[a], self.node_by_id[b]
        return math.hypot(na.x_m - nb.x_m, na.y_m - nb.y_m)

    def reachable_from(self, origin: int) -> frozenset[int]:
        """Node ids reachable from origin over any directed path (cached BFS)."""
        cached = self._reach_cache.get(origin)
        if cached is not None:
            return cached
        seen = {origin}
        frontier = [origin]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.out_neighbors[u]:
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
        result = frozenset(seen)
        self._reach_cache[origin] = result
        return result


def _validate_topology(nodes: list[Node], links: list[Link]) -> None:
    if not nodes:
        raise ConfigError("network has no nodes")
    ids = sorted(n.node_id for n in nodes)
    if ids != list(range(1, len(nodes) + 1)):
        raise ConfigError(
            f"node ids must be dense 1..{len(nodes)}, got {ids[:5]}..."
            if len(ids) > 5
            else f"node ids must be dense 1..{len(nodes)}, got {ids}"
        )
    id_set = set(ids)
    seen_pairs: set[tuple[int, int]] = set()
    for k, l in enumerate(links):
        where = f"links[{k}] ({l.from_node}->{l.to_node})"
        if l.from_node not in id_set or l.to_node not in id_set:
            raise ConfigError(f"{where}: endpoint not a known node id")
        if l.from_node == l.to_node:
            raise ConfigError(f"{where}: self-links are not allowed")
        if l.pair in seen_pairs:
            raise ConfigError(f"{where}: duplicate link for this ordered pair")
        seen_pairs.add(l.pair)
        if l.length_m <= 0:
            raise ConfigError(f"{where}: length_m must be > 0")
        if l.v_free_mps <= 0:
            raise ConfigError(f"{where}: free-flow speed must be > 0")
        if l.k_max_veh_per_m <= 0:
            raise ConfigError(f"{where}: k_max_veh_per_m must be > 0")


def traffic_density(volume: float, length_m: float) -> float:
    """Vehicles per meter on a link carrying `volume` vehicles."""
    if length_m <= 0:
        raise ContractError(f"link length must be > 0, got {length_m}")
    return volume / length_m


def journey_speed(density: float, v_free_mps: float, k_max: float) -> float:
    """Linear density-speed law, clamped at 0 beyond jam density."""
    return max(0.0, v_free_mps * (1.0 - density / k_max))


def link_journey_time(
    length_m: float, v_free_mps: float, k_max: float, volume: float
) -> float:
    v = journey_speed(traffic_density(volume, length_m), v_free_mps, k_max)
    if v <= SPEED_FLOOR_MPS:
        return INF
    return length_m / v


def journey_time(link: Link, volume: float) -> float:
    """Seconds to traverse `link` at the speed implied by `volume`, +inf if jammed."""
    return link_journey_time(
        link.length_m, link.v_free_mps, link.k_max_veh_per_m, volume
    )


def build_journey_matrix(net: TrafficNetwork, volumes) -> np.ndarray:
    """Journey-time matrix indexed by node id; +inf where no traversable link.

    `volumes` holds one vehicle count per link, ordered like `net.links`.
    """
    vols = np.asarray(volumes, dtype=float)
    if vols.shape != (net.link_count,):
        raise ConfigError(
            f"volumes must have one entry per link "
            f"({net.link_count}), got shape {vols.shape}"
        )
    density = vols / net.lengths
    speed = np.maximum(0.0, net.v_free * (1.0 - density / net.k_max))
    times = np.full(net.link_count, INF)
    open_mask = speed > SPEED_FLOOR_MPS
    times[open_mask] = net.lengths[open_mask] / speed[open_mask]

    m = net.node_count
    mat = np.full((m + 1, m + 1), INF)
    mat[net.from_ids, net.to_ids] = times
    return mat


def static_length_matrix(net: TrafficNetwork) -> np.ndarray:
    """Link lengths in matrix form, for shortest-distance routing."""
    m = net.node_count
    mat = np.full((m + 1, m + 1), INF)
    mat[net.from_ids, net.to_ids] = net.lengths
    return mat


def network_from_dict(doc: dict, source: str = "network") -> TrafficNetwork:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    raw_nodes = doc.get("nodes")
    raw_links = doc.get("links")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ConfigError(f"{source}: 'nodes' must be a non-empty array")
    if not isinstance(raw_links, list):
        raise ConfigError(f"{source}: 'links' must be an array")

    nodes = []
    for k, item in enumerate(raw_nodes):
        where = f"{source}: nodes[{k}]"
        try:
            nodes.append(
                Node(
                    node_id=int(item["id"]),
                    x_m=float(item["x_m"]),
                    y_m=float(item["y_m"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: expected {{id, x_m, y_m}} ({exc})") from exc

    links = []
    for k, item in enumerate(raw_links):
        where = f"{source}: links[{k}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{where}: expected an object")
        if "v_free_mps" in item and "v_free_kmh" in item:
            raise ConfigError(f"{where}: give v_free_mps or v_free_kmh, not both")
        try:
            if "v_free_kmh" in item:
                v_free = float(item["v_free_kmh"]) / 3.6
            else:
                v_free = float(item["v_free_mps"])
            links.append(
                Link(
                    from_node=int(item["from"]),
                    to_node=int(item["to"]),
                    length_m=float(item["length_m"]),
                    v_free_mps=v_free,
                    k_max_veh_per_m=float(item["k_max_veh_per_m"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(
                f"{where}: expected {{from, to, length_m, v_free_mps|v_free_kmh, "
                f"k_max_veh_per_m}} ({exc})"
            ) from exc

    try:
        return TrafficNetwork(nodes, links)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_network(path: str) -> TrafficNetwork:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read network file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    return network_from_dict(doc, source=path)

"""Cloud-side traffic twin: last-known link volumes, pedestrian densities, and
the event sets produced by threshold detection on incoming sensor observations.

The twin only ever sees what covering sources deliver. Undelivered packets
leave the previous (stale) values in place; links never observed report a
volume of 0. Speed-threshold comparisons happen as observations arrive (the
state tracks, per link, when the current uninterrupted slow-and-occupied run
started), so a TwinState is bound to the thresholds it was created with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .network import TrafficNetwork


@dataclass(frozen=True)
class EventThresholds:
    density_threshold: float = 0.5  # persons/m^2, exceedance is strict (>)
    speed_threshold: float = 0.5  # m/s, slow means strictly below (<)
    accident_window_s: float = 10.0

    def __post_init__(self):
        if self.density_threshold <= 0:
            raise ContractError("density_threshold must be > 0")
        if self.speed_threshold <= 0:
            raise ContractError("speed_threshold must be > 0")
        if self.accident_window_s <= 0:
            raise ContractError("accident_window_s must be > 0")


@dataclass(frozen=True)
class SensingSource:
    """A fixed roadside unit or a vehicle reporting what it currently covers."""

    kind: str  # "rsu" | "cav"
    source_id: int
    covered_nodes: frozenset[int] = frozenset()
    covered_links: frozenset[tuple[int, int]] = frozenset()

    @property
    def key(self) -> tuple[str, int]:
        return (self.kind, self.source_id)

    @property
    def order_key(self) -> tuple[int, int]:
        # RSUs ingest before CAVs, ascending id: last writer wins.
        return (0 if self.kind == "rsu" else 1, self.source_id)


@dataclass(frozen=True)
class LinkReading:
    volume: float
    speed_mps: float
    occupied: bool


@dataclass
class Observation:
    """One source's view for a single sampling instant."""

    links: dict[tuple[int, int], LinkReading] = field(default_factory=dict)
    node_densities: dict[int, float] = field(default_factory=dict)


class TwinState:
    def __init__(self, net: TrafficNetwork, thresholds: EventThresholds):
        self.net = net
        self.thresholds = thresholds
        self.link_volume = np.zeros(net.link_count)
        self.node_density = np.zeros(net.node_count + 1)
        self.node_observed = np.zeros(net.node_count + 1, dtype=bool)
        # Start time of the current uninterrupted slow+occupied run, else nan.
        self.low_speed_since = np.full(net.link_count, np.nan)
        self.event_nodes: set[int] = set()
        self.event_links: set[int] = set()  # link indices
        self.last_update: dict[tuple[str, int], float] = {}

    def event_link_pairs(self) -> set[tuple[int, int]]:
        links = self.net.links
        return {links[i].pair for i in self.event_links}

    def volumes(self) -> np.ndarray:
        """Last-known vehicle count per link, ordered like net.links."""
        return self.link_volume.copy()

    def ingest_arrays(
        self,
        source_key: tuple[str, int],
        link_idx: np.ndarray,
        volumes: np.ndarray,
        speeds: np.ndarray,
        occupied: np.ndarray,
        node_idx: np.ndarray,
        densities: np.ndarray,
        now: float,
    ) -> None:
        """Vectorized ingest of an already-delivered observation."""
        if link_idx.size:
            self.link_volume[link_idx] = volumes
            low = occupied & (speeds < self.thresholds.speed_threshold)
            run = self.low_speed_since[link_idx]
            run[~low] = np.nan
            run[low & np.isnan(run)] = now
            self.low_speed_since[link_idx] = run
        if node_idx.size:
            self.node_density[node_idx] = densities
            self.node_observed[node_idx] = True
        self.last_update[source_key] = now

    def snapshot_dict(self) -> dict:
        """Compact JSON-ready view (nonzero volumes, observed densities)."""
        links = self.net.links
        vols = {
            f"{links[i].from_node}-{links[i].to_node}": self.link_volume[i]
            for i in np.nonzero(self.link_volume)[0]
        }
        dens = {
            str(n): float(self.node_density[n])
            for n in np.nonzero(self.node_observed)[0]
        }
        return {
            "volumes": vols,
            "densities": dens,
            "event_nodes": sorted(self.event_nodes),
            "event_links": sorted(self.event_link_pairs()),
        }


def ingest_observation(
    state: TwinState,
    source: SensingSource,
    observation: Observation,
    delivered: bool,
    now: float,
) -> TwinState:
    """Apply one source's observation; a dropped packet changes nothing."""
    bad_links = set(observation.links) - set(source.covered_links)
    if bad_links:
        raise ContractError(f"observation outside source coverage: links {sorted(bad_links)}")
    bad_nodes = set(observation.node_densities) - set(source.covered_nodes)
    if bad_nodes:
        raise ContractError(f"observation outside source coverage: nodes {sorted(bad_nodes)}")
    if not delivered:
        return state

    link_index = state.net.link_index
    link_idx, vols, speeds, occ = [], [], [], []
    for pair, reading in observation.links.items():
        idx = link_index.get(pair)
        if idx is None:
            raise ContractError(f"observation references unknown link {pair}")
        if reading.volume < 0:
            raise ContractError(f"negative volume for link {pair}")
        link_idx.append(idx)
        vols.append(reading.volume)
        speeds.append(reading.speed_mps)
        occ.append(reading.occupied)
    node_idx, dens = [], []
    for node, d in observation.node_densities.items():
        if node not in state.net.node_by_id:
            raise ContractError(f"observation references unknown node {node}")
        if d < 0:
            raise ContractError(f"negative pedestrian density at node {node}")
        node_idx.append(node)
        dens.append(d)

    state.ingest_arrays(
        source.key,
        np.asarray(link_idx, dtype=int),
        np.asarray(vols, dtype=float),
        np.asarray(speeds, dtype=float),
        np.asarray(occ, dtype=bool),
        np.asarray(node_idx, dtype=int),
        np.asarray(dens, dtype=float),
        now,
    )
    return state


def detect_pedestrian_gathering(
    state: TwinState, thresholds: EventThresholds
) -> set[int]:
    """Nodes whose observed density strictly exceeds the threshold; merged into
    the state's event-node set."""
    mask = state.node_observed & (state.node_density > thresholds.density_threshold)
    flagged = {int(n) for n in np.nonzero(mask)[0]}
    state.event_nodes |= flagged
    return flagged


def detect_accident(
    state: TwinState, thresholds: EventThresholds, now: float
) -> tuple[set[int], set[tuple[int, int]]]:
    """Links whose delivered readings stayed slow and occupied for the whole
    accident window; merged into the state's event-link set.

    Speeds are judged per reading at ingest time, so only the window length
    from `thresholds` applies here. The node set mirrors the event-set shape
    but stays empty: the twin keeps speed evidence per link, and an accident
    at an intersection surfaces through its approach links.
    """
    run = state.low_speed_since
    mask = ~np.isnan(run) & (now - run >= thresholds.accident_window_s)
    flagged_idx = {int(i) for i in np.nonzero(mask)[0]}
    state.event_links |= flagged_idx
    links = state.net.links
    return set(), {links[i].pair for i in flagged_idx}


def clear_resolved_events(
    state: TwinState,
    thresholds: EventThresholds,
    clearable_nodes: set[int],
    clearable_links: set[tuple[int, int]],
) -> None:
    """Drop flagged elements that are eligible to clear (their scheduled cause
    has ended) and whose latest delivered observation no longer meets the
    detection criterion. Stale evidence keeps an element flagged."""
    for n in list(state.event_nodes):
        if n in clearable_nodes and state.node_density[n] <= thresholds.density_threshold:
            state.event_nodes.discard(n)
    links = state.net.links
    for i in list(state.event_links):
        if links[i].pair in clearable_links and np.isnan(state.low_speed_since[i]):
            state.event_links.discard(i)


def twin_volumes(state: TwinState, net: TrafficNetwork | None = None) -> np.ndarray:
    """Last-known volume per link; never-observed links default to 0."""
    if net is not None and net is not state.net:
        raise ContractError("twin state belongs to a different network")
    return state.volumes()

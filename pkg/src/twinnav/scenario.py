"""Scenario files: everything one simulation run needs, in a single JSON
document. See README for the full schema. Paths inside the file resolve
relative to the file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

from .comms import FlowLatency, LatencyModel, DEFAULT_FLOWS
from .errors import ConfigError
from .network import TrafficNetwork, load_network, network_from_dict
from .twin import EventThresholds, SensingSource

EVENT_KINDS = ("accident", "gathering")
DEFAULT_GATHERING_DENSITY = 1.0  # persons/m^2 of an active gathering


@dataclass(frozen=True)
class EventSpec:
    kind: str  # "accident" on a link, "gathering" at a node
    node: int | None = None
    link: tuple[int, int] | None = None
    onset_s: float = 0.0
    end_s: float | None = None  # None: never clears within the run
    density: float = DEFAULT_GATHERING_DENSITY

    @property
    def location(self):
        return self.link if self.kind == "accident" else self.node


@dataclass(frozen=True)
class RandomEvents:
    count: int
    kinds: tuple[str, ...] = EVENT_KINDS
    onset_min_s: float | None = None
    onset_max_s: float | None = None  # default: half the simulated horizon
    duration_s: float | None = None  # None: events persist to the end of the run
    density: float = DEFAULT_GATHERING_DENSITY


@dataclass(frozen=True)
class RsuSpec:
    node: int
    radius_m: float


@dataclass(frozen=True)
class SimParams:
    dt_s: float
    t_sim_s: float
    seed: int

    @property
    def n_steps(self) -> int:
        return int(round(self.t_sim_s / self.dt_s))


@dataclass(frozen=True)
class TrafficParams:
    n_vel: int
    p_user: float
    spawn_window_frac: float = 0.8


@dataclass(frozen=True)
class Scenario:
    network: TrafficNetwork
    sim: SimParams
    traffic: TrafficParams
    events: tuple[EventSpec, ...] = ()
    events_random: RandomEvents | None = None
    rsus: tuple[RsuSpec, ...] = ()
    thresholds: EventThresholds = EventThresholds()
    latency: LatencyModel = LatencyModel()
    source_path: str = "<scenario>"

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, sim=replace(self.sim, seed=seed))

    def with_p_user(self, p_user: float) -> "Scenario":
        if not 0.0 <= p_user <= 1.0:
            raise ConfigError(f"p_user must be within [0, 1], got {p_user}")
        return replace(self, traffic=replace(self.traffic, p_user=p_user))

    def with_event_count(self, count: int) -> "Scenario":
        if self.events_random is None:
            raise ConfigError(
                "sweeping the event count needs an events_random block"
            )
        return replace(self, events_random=replace(self.events_random, count=count))

    def rsu_sources(self) -> list[SensingSource]:
        """Static sensing sources: an RSU covers the nodes within its radius
        and the links whose both endpoints are within it."""
        out = []
        for idx, rsu in enumerate(self.rsus):
            covered_nodes = frozenset(
                n.node_id
                for n in self.network.nodes
                if self.network.node_distance_m(rsu.node, n.node_id) <= rsu.radius_m
            )
            covered_links = frozenset(
                l.pair
                for l in self.network.links
                if l.from_node in covered_nodes and l.to_node in covered_nodes
            )
            out.append(
                SensingSource(
                    kind="rsu",
                    source_id=idx,
                    covered_nodes=covered_nodes,
                    covered_links=covered_links,
                )
            )
        return out


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return doc[key]


def _parse_event(item: dict, k: int, net: TrafficNetwork, where: str) -> EventSpec:
    w = f"{where}: events[{k}]"
    kind = _require(item, "kind", w)
    if kind not in EVENT_KINDS:
        raise ConfigError(f"{w}: kind must be one of {EVENT_KINDS}, got {kind!r}")
    onset = float(item.get("onset_s", 0.0))
    end = item.get("end_s")
    end_s = None if end is None else float(end)
    if end_s is not None and end_s < onset:
        raise ConfigError(f"{w}: end_s precedes onset_s")
    density = float(item.get("density", DEFAULT_GATHERING_DENSITY))
    if kind == "gathering":
        node = int(_require(item, "node", w))
        if node not in net.node_by_id:
            raise ConfigError(f"{w}: unknown node {node}")
        return EventSpec(kind=kind, node=node, onset_s=onset, end_s=end_s, density=density)
    raw = _require(item, "link", w)
    if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
        raise ConfigError(f"{w}: link must be a [from, to] pair")
    pair = (int(raw[0]), int(raw[1]))
    if net.link_between(*pair) is None:
        raise ConfigError(f"{w}: no link {pair[0]}->{pair[1]} in the network")
    return EventSpec(kind=kind, link=pair, onset_s=onset, end_s=end_s, density=density)


def _parse_latency(doc: dict, where: str) -> LatencyModel:
    flows = dict(DEFAULT_FLOWS)
    known = set(flows) | {"pdr_ssms", "pdr_info"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{where}: unknown latency keys {sorted(unknown)}")
    for name in DEFAULT_FLOWS:
        if name in doc:
            spec = doc[name]
            w = f"{where}: latency.{name}"
            if not isinstance(spec, dict):
                raise ConfigError(f"{w}: expected an object")
            try:
                flows[name] = FlowLatency(
                    min_ms=float(spec["min_ms"]),
                    max_ms=float(spec["max_ms"]),
                    dist=spec.get("dist", "uniform"),
                    mean_ms=(
                        float(spec["mean_ms"]) if "mean_ms" in spec else None
                    ),
                )
            except KeyError as exc:
                raise ConfigError(f"{w}: missing {exc}") from exc
            except ConfigError as exc:
                raise ConfigError(f"{w}: {exc}") from exc
    try:
        return LatencyModel(
            flows=flows,
            pdr_ssms=float(doc.get("pdr_ssms", 0.9953)),
            pdr_info=float(doc.get("pdr_info", 1.0)),
        )
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def scenario_from_dict(
    doc: dict, base_dir: str = ".", source: str = "<scenario>"
) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")

    if "network" in doc:
        net = network_from_dict(doc["network"], source=f"{source}: network")
    else:
        rel = _require(doc, "network_file", source)
        net = load_network(os.path.join(base_dir, rel))

    sim_doc = _require(doc, "sim", source)
    try:
        sim = SimParams(
            dt_s=float(sim_doc["dt_s"]),
            t_sim_s=float(sim_doc["t_sim_s"]),
            seed=int(sim_doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: sim block needs dt_s and t_sim_s ({exc})") from exc
    if sim.dt_s <= 0:
        raise ConfigError(f"{source}: sim.dt_s must be > 0")
    if sim.t_sim_s <= 0:
        raise ConfigError(f"{source}: sim.t_sim_s must be > 0")
    if abs(sim.n_steps * sim.dt_s - sim.t_sim_s) > 1e-9:
        raise ConfigError(f"{source}: sim.t_sim_s must be a multiple of sim.dt_s")

    tr_doc = _require(doc, "traffic", source)
    try:
        traffic = TrafficParams(
            n_vel=int(tr_doc["n_vel"]),
            p_user=float(tr_doc["p_user"]),
            spawn_window_frac=float(
                tr_doc.get("spawn", {}).get("window_frac", 0.8)
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: traffic block needs n_vel and p_user ({exc})") from exc
    if traffic.n_vel < 0:
        raise ConfigError(f"{source}: traffic.n_vel must be >= 0")
    if not 0.0 <= traffic.p_user <= 1.0:
        raise ConfigError(f"{source}: traffic.p_user must be within [0, 1]")
    if not 0.0 < traffic.spawn_window_frac <= 1.0:
        raise ConfigError(f"{source}: spawn.window_frac must be in (0, 1]")

    if "events" in doc and "events_random" in doc:
        raise ConfigError(f"{source}: give events or events_random, not both")
    events: tuple[EventSpec, ...] = ()
    events_random = None
    if "events" in doc:
        if not isinstance(doc["events"], list):
            raise ConfigError(f"{source}: events must be an array")
        events = tuple(
            _parse_event(item, k, net, source) for k, item in enumerate(doc["events"])
        )
    elif "events_random" in doc:
        er = doc["events_random"]
        try:
            kinds = tuple(er.get("kinds", list(EVENT_KINDS)))
            events_random = RandomEvents(
                count=int(er["count"]),
                kinds=kinds,
                onset_min_s=(
                    float(er["onset_min_s"]) if "onset_min_s" in er else None
                ),
                onset_max_s=(
                    float(er["onset_max_s"]) if "onset_max_s" in er else None
                ),
                duration_s=(
                    float(er["duration_s"]) if er.get("duration_s") is not None else None
                ),
                density=float(er.get("density", DEFAULT_GATHERING_DENSITY)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: events_random needs count ({exc})") from exc
        bad = set(events_random.kinds) - set(EVENT_KINDS)
        if bad or not events_random.kinds:
            raise ConfigError(
                f"{source}: events_random.kinds must be a non-empty subset of {EVENT_KINDS}"
            )
        if events_random.count < 0:
            raise ConfigError(f"{source}: events_random.count must be >= 0")

    rsus = []
    for k, item in enumerate(doc.get("sensing", {}).get("rsus", [])):
        w = f"{source}: sensing.rsus[{k}]"
        try:
            rsu = RsuSpec(node=int(item["node"]), radius_m=float(item["radius_m"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{w}: expected {{node, radius_m}} ({exc})") from exc
        if rsu.node not in net.node_by_id:
            raise ConfigError(f"{w}: unknown node {rsu.node}")
        if rsu.radius_m <= 0:
            raise ConfigError(f"{w}: radius_m must be > 0")
        rsus.append(rsu)

    th_doc = doc.get("thresholds", {})
    try:
        thresholds = EventThresholds(
            density_threshold=float(th_doc.get("density_threshold", 0.5)),
            speed_threshold=float(th_doc.get("speed_threshold", 0.5)),
            accident_window_s=float(th_doc.get("accident_window_s", 10.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: bad thresholds block ({exc})") from exc

    latency = _parse_latency(doc.get("latency", {}), source)

    return Scenario(
        network=net,
        sim=sim,
        traffic=traffic,
        events=events,
        events_random=events_random,
        rsus=tuple(rsus),
        thresholds=thresholds,
        latency=latency,
        source_path=source,
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    return scenario_from_dict(doc, base_dir=os.path.dirname(path) or ".", source=path)

"""Discrete-time mesoscopic traffic engine.

Vehicles move link by link at the speed implied by their current link's true
vehicle count (linear density-speed law); links hosting an active event force
speed 0. Transfers between links are FIFO and capacity-gated, so a link never
holds more than k_max * length vehicles. Connected vehicles are routed by the
cloud loop (twin -> detection -> masked journey matrix -> planner) while
unconnected vehicles follow their static shortest-distance route.

Step phases, in fixed order: spawn, event schedule, sensing and twin ingest,
event detection, route planning and delivery, movement, bookkeeping. One run
is single-threaded and fully determined by (scenario, seed).
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nav
from .comms import FlowStreams, check_deadline, deliver, sample_service_latency
from .errors import ConfigError
from .network import TrafficNetwork, build_journey_matrix, static_length_matrix
from .scenario import Scenario, EventSpec
from .twin import TwinState, clear_resolved_events, detect_accident, \
    detect_pedestrian_gathering

CAV = "cav"
UNCONNECTED = "unconnected"
_END_EPS = 1e-9
_CAP_EPS = 1e-9


@dataclass(slots=True)
class Vehicle:
    vid: int
    klass: str
    origin: int
    destination: int
    entry_step: int
    route: nav.Route | None = None
    link_idx: int | None = None
    pos_m: float = 0.0
    arrival_step: int | None = None
    encountered: set = field(default_factory=set)
    blocked: bool = False
    state: str = "queued"  # queued | moving | arrived

    @property
    def arrived(self) -> bool:
        return self.arrival_step is not None

    @property
    def entered(self) -> bool:
        return self.link_idx is not None or self.arrived


@dataclass(frozen=True)
class ActiveEvent:
    index: int
    kind: str  # "accident" | "gathering"
    link_idx: int | None
    node: int | None
    onset_step: int
    end_step: int | None  # active during [onset_step, end_step); None = forever
    density: float

    def active(self, step: int) -> bool:
        if step < self.onset_step:
            return False
        return self.end_step is None or step < self.end_step


@dataclass(frozen=True)
class MetricsSummary:
    spawned_cav: int
    spawned_unconnected: int
    completed_cav: int
    completed_unconnected: int
    mean_tt_cav_s: float
    mean_tt_unconnected_s: float
    mean_tt_overall_s: float
    mean_enc_cav: float
    mean_enc_unconnected: float
    mean_enc_overall: float
    blocking_cav: float
    blocking_unconnected: float
    blocking_overall: float

    CSV_FIELDS = (
        "mean_tt_cav_s",
        "mean_tt_unconnected_s",
        "mean_tt_overall_s",
        "mean_enc_cav",
        "mean_enc_unconnected",
        "mean_enc_overall",
        "blocking_cav",
        "blocking_unconnected",
        "blocking_overall",
    )

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def csv_row(self) -> str:
        return ",".join(f"{getattr(self, f):.6f}" for f in self.CSV_FIELDS)


def poisson_draw(rng: random.Random, lam: float) -> int:
    """Knuth's product method; exact and stable for the small rates used here."""
    if lam <= 0:
        return 0
    threshold = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= threshold:
            return k
        k += 1


def shortest_distance_route(
    net: TrafficNetwork, start: int, end: int, vehicle_id=None
) -> nav.Route | None:
    """Static route minimizing total length in meters; ties break exactly like
    the journey-time planner."""
    found = nav.dijkstra_fastest(
        static_length_matrix(net).tolist(), start, end, net.out_neighbors
    )
    if found is None:
        return None
    return nav.Route(nodes=list(found.nodes), vehicle_id=vehicle_id)


def record_encounter(
    vehicle: Vehicle,
    events_on_link: dict[int, list[int]],
    events_at_node: dict[int, list[int]],
    blocked_now: bool,
) -> Vehicle:
    """Count each active event at most once per vehicle: an encounter is
    occupying the event's link, or any link pointing into the event's node."""
    if vehicle.link_idx is not None and vehicle.route is not None:
        hits = events_on_link.get(vehicle.link_idx)
        if hits:
            vehicle.encountered.update(hits)
        hits = events_at_node.get(vehicle.route.next_node)
        if hits:
            vehicle.encountered.update(hits)
    if blocked_now:
        vehicle.blocked = True
    return vehicle


class Engine:
    def __init__(
        self,
        scenario: Scenario,
        *,
        seed: int | None = None,
        single_v2c: bool = False,
        twin_journal_path: str | None = None,
        routes_journal_path: str | None = None,
        on_step=None,
    ):
        self.scenario = scenario
        self.seed = scenario.sim.seed if seed is None else seed
        self.single_v2c = single_v2c
        self.on_step = on_step
        self._twin_journal_path = twin_journal_path
        self._routes_journal_path = routes_journal_path
        self._twin_fh = None
        self._routes_fh = None

        net = scenario.network
        self.net = net
        self.dt = scenario.sim.dt_s
        self.n_steps = scenario.sim.n_steps

        self.rng_spawn = random.Random(f"{self.seed}/spawn")
        self.streams = FlowStreams(self.seed)

        self.events = self._materialize_events()
        self.twin = TwinState(net, scenario.thresholds)

        self.vehicles: list[Vehicle] = []
        self.link_counts = np.zeros(net.link_count, dtype=np.int64)
        self.link_queues: list[deque[Vehicle]] = [
            deque() for _ in range(net.link_count)
        ]
        self.link_capacity = net.k_max * net.lengths

        # RSU coverage is static: precompute index arrays per source.
        self._rsu_cov: list[tuple[int, np.ndarray, np.ndarray]] = []
        for src in scenario.rsu_sources():
            link_idx = np.array(
                sorted(net.link_index[p] for p in src.covered_links), dtype=int
            )
            node_idx = np.array(sorted(src.covered_nodes), dtype=int)
            self._rsu_cov.append((src.source_id, link_idx, node_idx))

        self._length_rows = static_length_matrix(net).tolist()
        self._static_trees: dict[int, tuple[list[float], list[int]]] = {}

        self.step = -1
        self.speeds = np.zeros(net.link_count)
        self.closed = np.zeros(net.link_count, dtype=bool)
        self.truth_density = np.zeros(net.node_count + 1)
        self.last_sensed_volumes = np.zeros(net.link_count, dtype=np.int64)
        self._events_on_link: dict[int, list[int]] = {}
        self._events_at_node: dict[int, list[int]] = {}
        self._spawned = 0
        self._spawn_lam = (
            scenario.traffic.n_vel
            / (scenario.traffic.spawn_window_frac * self.n_steps)
            if self.n_steps
            else 0.0
        )

    # ------------------------------------------------------------------ setup

    def _materialize_events(self) -> list[ActiveEvent]:
        sc = self.scenario
        net = self.net
        dt = self.dt
        specs: list[EventSpec] = list(sc.events)
        if sc.events_random is not None and sc.events_random.count:
            er = sc.events_random
            rng = random.Random(f"{self.seed}/events")
            kinds = [rng.choice(er.kinds) for _ in range(er.count)]
            n_acc = kinds.count("accident")
            n_gat = kinds.count("gathering")
            if n_acc > net.link_count:
                raise ConfigError(
                    f"{n_acc} random accidents but only {net.link_count} links"
                )
            if n_gat > net.node_count:
                raise ConfigError(
                    f"{n_gat} random gatherings but only {net.node_count} nodes"
                )
            acc_links = rng.sample(range(net.link_count), n_acc)
            gat_nodes = rng.sample(range(1, net.node_count + 1), n_gat)
            lo = er.onset_min_s if er.onset_min_s is not None else 0.0
            hi = er.onset_max_s if er.onset_max_s is not None else sc.sim.t_sim_s / 2
            if hi < lo:
                raise ConfigError("events_random onset window is empty")
            it_acc, it_gat = iter(acc_links), iter(gat_nodes)
            for kind in kinds:
                onset = rng.uniform(lo, hi)
                end = None if er.duration_s is None else onset + er.duration_s
                if kind == "accident":
                    pair = net.links[next(it_acc)].pair
                    specs.append(EventSpec(kind=kind, link=pair, onset_s=onset,
                                           end_s=end, density=er.density))
                else:
                    specs.append(EventSpec(kind=kind, node=next(it_gat),
                                           onset_s=onset, end_s=end,
                                           density=er.density))
        out = []
        for idx, spec in enumerate(specs):
            link_idx = (
                self.net.link_index[spec.link] if spec.link is not None else None
            )
            out.append(
                ActiveEvent(
                    index=idx,
                    kind=spec.kind,
                    link_idx=link_idx,
                    node=spec.node,
                    onset_step=int(round(spec.onset_s / dt)),
                    end_step=(
                        None if spec.end_s is None else int(round(spec.end_s / dt))
                    ),
                    density=spec.density,
                )
            )
        return out

    def _static_tree(self, origin: int) -> tuple[list[float], list[int]]:
        tree = self._static_trees.get(origin)
        if tree is None:
            tree = nav.shortest_path_tree(
                self._length_rows, origin, self.net.out_neighbors
            )
            self._static_trees[origin] = tree
        return tree

    # ------------------------------------------------------------- step phases

    def _spawn(self, step: int) -> None:
        remaining = self.scenario.traffic.n_vel - self._spawned
        if remaining <= 0:
            return
        n = min(poisson_draw(self.rng_spawn, self._spawn_lam), remaining)
        m = self.net.node_count
        for _ in range(n):
            klass = CAV if self.rng_spawn.random() < self.scenario.traffic.p_user \
                else UNCONNECTED
            for _ in range(1000):
                origin = self.rng_spawn.randrange(1, m + 1)
                dest = self.rng_spawn.randrange(1, m + 1)
                if dest != origin and dest in self.net.reachable_from(origin):
                    break
            else:
                raise ConfigError(
                    "could not draw a reachable origin-destination pair; "
                    "the network is too disconnected"
                )
            vid = self._spawned + 1
            veh = Vehicle(
                vid=vid, klass=klass, origin=origin, destination=dest,
                entry_step=step,
            )
            if klass == UNCONNECTED:
                _, pred = self._static_tree(origin)
                veh.route = nav.Route(
                    nodes=nav.tree_path(pred, origin, dest), vehicle_id=vid
                )
            self.vehicles.append(veh)
            self._spawned += 1

    def _update_events(self, step: int) -> None:
        net = self.net
        self.closed[:] = False
        self.truth_density[:] = 0.0
        self._events_on_link = {}
        self._events_at_node = {}
        for ev in self.events:
            if not ev.active(step):
                continue
            if ev.kind == "accident":
                self.closed[ev.link_idx] = True
                self._events_on_link.setdefault(ev.link_idx, []).append(ev.index)
            else:
                for li in net.in_links[ev.node]:
                    self.closed[li] = True
                self.truth_density[ev.node] = max(
                    self.truth_density[ev.node], ev.density
                )
                self._events_at_node.setdefault(ev.node, []).append(ev.index)

    def _compute_speeds(self) -> None:
        net = self.net
        density = self.link_counts / net.lengths
        v = np.maximum(0.0, net.v_free * (1.0 - density / net.k_max))
        v[self.closed] = 0.0
        self.speeds = v

    def _sense_and_ingest(self, step: int) -> None:
        now = step * self.dt
        occupied = self.link_counts > 0
        self.last_sensed_volumes = self.link_counts.copy()
        model = self.scenario.latency
        ssms_rng = self.streams.rng("pdr_ssms")
        info_rng = self.streams.rng("pdr_info")
        empty_i = np.empty(0, dtype=int)
        empty_f = np.empty(0)
        for rsu_id, link_idx, node_idx in self._rsu_cov:
            delivered = deliver(model.pdr_ssms, ssms_rng)
            if not delivered:
                continue
            self.twin.ingest_arrays(
                ("rsu", rsu_id),
                link_idx,
                self.link_counts[link_idx],
                self.speeds[link_idx],
                occupied[link_idx],
                node_idx,
                self.truth_density[node_idx],
                now,
            )
        for veh in self.vehicles:
            if veh.klass != CAV or veh.link_idx is None:
                continue
            delivered = deliver(model.pdr_info, info_rng)
            if not delivered:
                continue
            li = np.array([veh.link_idx], dtype=int)
            self.twin.ingest_arrays(
                ("cav", veh.vid),
                li,
                self.link_counts[li],
                self.speeds[li],
                occupied[li],
                empty_i,
                empty_f,
                now,
            )

    def _detect(self, step: int) -> None:
        thresholds = self.scenario.thresholds
        detect_pedestrian_gathering(self.twin, thresholds)
        detect_accident(self.twin, thresholds, step * self.dt)
        # Flagged elements stay until their scheduled cause ends; elements with
        # no scheduled cause (emergent jams) may clear on any recovery evidence.
        active_nodes = set()
        active_links = set()
        for ev in self.events:
            if not ev.active(step):
                continue
            if ev.kind == "gathering":
                active_nodes.add(ev.node)
            else:
                active_links.add(self.net.links[ev.link_idx].pair)
        clear_resolved_events(
            self.twin,
            thresholds,
            self.twin.event_nodes - active_nodes,
            self.twin.event_link_pairs() - active_links,
        )

    def _plan(self, step: int) -> None:
        net = self.net
        matrix = build_journey_matrix(net, self.twin.volumes())
        masked = nav.mask_events(
            matrix, self.twin.event_nodes, self.twin.event_link_pairs()
        )
        rows = masked.tolist()
        inp = nav.PlanningInput(
            matrix=rows,
            new_users={
                v.vid: (v.origin, v.destination)
                for v in self.vehicles
                if v.klass == CAV and not v.entered
            },
            out_neighbors=net.out_neighbors,
        )
        by_vid = {v.vid: v for v in self.vehicles}
        fresh = nav.plan_new_users(inp)
        for vid in sorted(fresh.routes):
            route = fresh.routes[vid]
            veh = by_vid[vid]
            t_svc = sample_service_latency(
                self.scenario.latency, self.streams, self.single_v2c
            )
            if not deliver(self.scenario.latency.pdr_info, self.streams.rng("pdr_info")):
                continue  # response lost; the user retries next step
            first = net.link_between(route.nodes[0], route.nodes[1])
            if not check_deadline(t_svc, first.v_free_mps):
                continue  # missed the request-distance budget; retry next step
            veh.route = route
            self._journal_route(step, veh, "new")

        current = {
            v.vid: v.route
            for v in self.vehicles
            if v.klass == CAV and v.link_idx is not None and v.route is not None
        }
        replanned = nav.replan_affected(inp, current)
        for vid in sorted(replanned.routes):
            veh = by_vid[vid]
            t_svc = sample_service_latency(
                self.scenario.latency, self.streams, self.single_v2c
            )
            if not deliver(self.scenario.latency.pdr_info, self.streams.rng("pdr_info")):
                continue
            # The new plan must arrive before the vehicle reaches the next
            # intersection; a stopped vehicle has unlimited time.
            v_now = self.speeds[veh.link_idx]
            if v_now > 0:
                budget = (net.lengths[veh.link_idx] - veh.pos_m) / v_now
                if t_svc > budget:
                    continue  # applied at the following intersection instead
            veh.route = nav.spliced_route(veh.route, replanned.routes[vid])
            self._journal_route(step, veh, "replan")

    def _move(self, step: int) -> None:
        net = self.net
        dt = self.dt
        lengths = net.lengths
        for li in range(net.link_count):
            dq = self.link_queues[li]
            if not dq:
                continue
            v = self.speeds[li]
            if v > 0.0:
                length = lengths[li]
                adv = v * dt
                for veh in dq:
                    veh.pos_m = min(veh.pos_m + adv, length)
        # FIFO head transfers; a closed link releases nobody.
        for li in range(net.link_count):
            dq = self.link_queues[li]
            if not dq or self.closed[li]:
                continue
            length = lengths[li] - _END_EPS
            while dq and dq[0].pos_m >= length:
                veh = dq[0]
                route = veh.route
                if route.cursor == len(route.nodes) - 1:
                    dq.popleft()
                    self.link_counts[li] -= 1
                    veh.link_idx = None
                    veh.arrival_step = step
                    veh.state = "arrived"
                    continue
                nxt = net.link_index[
                    (route.nodes[route.cursor], route.nodes[route.cursor + 1])
                ]
                # Strict gate: occupancy stays below jam capacity, so an open
                # link always keeps a positive speed and can drain.
                if self.link_counts[nxt] + 1 > self.link_capacity[nxt] - _CAP_EPS:
                    break  # no room downstream; the whole queue waits
                dq.popleft()
                self.link_counts[li] -= 1
                self.link_counts[nxt] += 1
                route.cursor += 1
                veh.link_idx = nxt
                veh.pos_m = 0.0
                self.link_queues[nxt].append(veh)
        # Routed vehicles still outside the network enter their first link.
        for veh in self.vehicles:
            if veh.entered or veh.route is None:
                continue
            first = net.link_index[(veh.route.nodes[0], veh.route.nodes[1])]
            if self.link_counts[first] + 1 > self.link_capacity[first] - _CAP_EPS:
                continue
            self.link_counts[first] += 1
            veh.link_idx = first
            veh.pos_m = 0.0
            self.link_queues[first].append(veh)

    def _bookkeep(self, step: int) -> None:
        net = self.net
        for veh in self.vehicles:
            if veh.arrived:
                continue
            li = veh.link_idx
            if li is None:
                veh.state = "queued"  # waiting to enter at its origin
                continue
            at_end = veh.pos_m >= net.lengths[li] - _END_EPS
            v = self.speeds[li]
            veh.state = "queued" if (v <= 0.0 or at_end) else "moving"
            blocked_now = bool(self.closed[li])
            if not blocked_now and at_end and veh.route.cursor < len(veh.route.nodes) - 1:
                nxt = net.link_index[
                    (veh.route.nodes[veh.route.cursor],
                     veh.route.nodes[veh.route.cursor + 1])
                ]
                blocked_now = bool(self.closed[nxt])
            record_encounter(
                veh, self._events_on_link, self._events_at_node, blocked_now
            )

    # ---------------------------------------------------------------- journals

    def _journal_route(self, step: int, veh: Vehicle, reason: str) -> None:
        if self._routes_fh is not None:
            self._routes_fh.write(
                json.dumps(
                    {
                        "step": step,
                        "vehicle": veh.vid,
                        "route": list(veh.route.nodes),
                        "reason": reason,
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )

    def _journal_twin(self, step: int) -> None:
        if self._twin_fh is not None:
            doc = {"step": step, "time_s": step * self.dt}
            doc.update(self.twin.snapshot_dict())
            self._twin_fh.write(json.dumps(doc, separators=(",", ":")) + "\n")

    # --------------------------------------------------------------------- run

    def run(self) -> MetricsSummary:
        self._twin_fh = (
            open(self._twin_journal_path, "w", encoding="utf-8")
            if self._twin_journal_path
            else None
        )
        self._routes_fh = (
            open(self._routes_journal_path, "w", encoding="utf-8")
            if self._routes_journal_path
            else None
        )
        try:
            for step in range(self.n_steps):
                self.step = step
                self._spawn(step)
                self._update_events(step)
                self._compute_speeds()
                self._sense_and_ingest(step)
                self._detect(step)
                self._plan(step)
                self._move(step)
                self._bookkeep(step)
                self._journal_twin(step)
                if self.on_step is not None:
                    self.on_step(self, step)
        finally:
            if self._twin_fh is not None:
                self._twin_fh.close()
            if self._routes_fh is not None:
                self._routes_fh.close()
        return self.metrics()

    def metrics(self) -> MetricsSummary:
        dt = self.dt

        def klass_of(k):
            return [v for v in self.vehicles if v.klass == k]

        def mean(xs):
            return sum(xs) / len(xs) if xs else math.nan

        def tt(vehs):
            return [
                (v.arrival_step - v.entry_step) * dt for v in vehs if v.arrived
            ]

        cav, unc = klass_of(CAV), klass_of(UNCONNECTED)
        done_cav, done_unc = tt(cav), tt(unc)
        return MetricsSummary(
            spawned_cav=len(cav),
            spawned_unconnected=len(unc),
            completed_cav=len(done_cav),
            completed_unconnected=len(done_unc),
            mean_tt_cav_s=mean(done_cav),
            mean_tt_unconnected_s=mean(done_unc),
            mean_tt_overall_s=mean(done_cav + done_unc),
            mean_enc_cav=mean([len(v.encountered) for v in cav]),
            mean_enc_unconnected=mean([len(v.encountered) for v in unc]),
            mean_enc_overall=mean([len(v.encountered) for v in self.vehicles]),
            blocking_cav=mean([1.0 if v.blocked else 0.0 for v in cav]),
            blocking_unconnected=mean([1.0 if v.blocked else 0.0 for v in unc]),
            blocking_overall=mean(
                [1.0 if v.blocked else 0.0 for v in self.vehicles]
            ),
        )


def run(
    scenario: Scenario,
    *,
    seed: int | None = None,
    single_v2c: bool = False,
    twin_journal_path: str | None = None,
    routes_journal_path: str | None = None,
    on_step=None,
) -> MetricsSummary:
    """Run one simulation to completion and return its metrics."""
    return Engine(
        scenario,
        seed=seed,
        single_v2c=single_v2c,
        twin_journal_path=twin_journal_path,
        routes_journal_path=routes_journal_path,
        on_step=on_step,
    ).run()

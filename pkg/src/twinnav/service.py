"""Line-delimited JSON route-planning service.

One UTF-8 JSON message per line over a plain TCP stream. Incoming types:

  {"type": "sensor_update", "source": {"kind": "rsu"|"cav", "id": 3},
   "time_s": 12.0,
   "links": [{"from": 1, "to": 2, "volume": 4, "speed_mps": 0.2,
              "occupied": true}],
   "nodes": [{"id": 7, "density": 1.2}]}

  {"type": "route_request", "vehicle": "car-1", "position": 1,
   "destination": 9}

A sensor_update gets no reply on success (errors are reported); a
route_request gets exactly one route_response or error. Unknown types answer
{"type": "error", "code": "unknown_type"}; unparsable lines answer
{"type": "error", "code": "parse"} and keep the connection open.

Sensor updates feed a live twin (a source's coverage is exactly what it
reports); each update advances the service clock and re-runs event detection,
and route requests plan over the current event-masked journey matrix.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading

from . import nav
from .errors import ContractError, DegenerateRouteRequest
from .network import build_journey_matrix
from .scenario import Scenario
from .twin import (
    LinkReading,
    Observation,
    SensingSource,
    TwinState,
    detect_accident,
    detect_pedestrian_gathering,
    ingest_observation,
)

log = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


class ServiceState:
    """Twin plus planning machinery behind a lock; handlers may run on many
    threads but every mutation and every planning snapshot is serialized."""

    def __init__(self, scenario: Scenario):
        self.net = scenario.network
        self.thresholds = scenario.thresholds
        self.twin = TwinState(self.net, self.thresholds)
        self.clock_s = 0.0
        self.dt_s = scenario.sim.dt_s
        self.lock = threading.Lock()

    def apply_sensor_update(self, msg: dict) -> None:
        source_doc = msg.get("source")
        if not isinstance(source_doc, dict) or "kind" not in source_doc:
            raise ServiceError("bad_request", "sensor_update needs source {kind, id}")
        kind = source_doc["kind"]
        if kind not in ("rsu", "cav"):
            raise ServiceError("bad_request", f"unknown source kind {kind!r}")
        try:
            source_id = int(source_doc.get("id", 0))
        except (TypeError, ValueError):
            raise ServiceError("bad_request", "source id must be an integer")

        links: dict[tuple[int, int], LinkReading] = {}
        for item in msg.get("links", []):
            try:
                pair = (int(item["from"]), int(item["to"]))
                links[pair] = LinkReading(
                    volume=float(item["volume"]),
                    speed_mps=float(item["speed_mps"]),
                    occupied=bool(item["occupied"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ServiceError(
                    "bad_request",
                    f"link readings need from, to, volume, speed_mps, occupied ({exc})",
                )
        nodes: dict[int, float] = {}
        for item in msg.get("nodes", []):
            try:
                nodes[int(item["id"])] = float(item["density"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ServiceError(
                    "bad_request", f"node readings need id and density ({exc})"
                )

        source = SensingSource(
            kind=kind,
            source_id=source_id,
            covered_nodes=frozenset(nodes),
            covered_links=frozenset(links),
        )
        observation = Observation(links=links, node_densities=nodes)
        with self.lock:
            now = float(msg.get("time_s", self.clock_s + self.dt_s))
            self.clock_s = max(self.clock_s, now)
            try:
                ingest_observation(self.twin, source, observation, True, now)
            except ContractError as exc:
                raise ServiceError("bad_request", str(exc))
            detect_pedestrian_gathering(self.twin, self.thresholds)
            detect_accident(self.twin, self.thresholds, self.clock_s)

    def plan_route(self, msg: dict) -> dict:
        try:
            vehicle = msg["vehicle"]
            position = int(msg["position"])
            destination = int(msg["destination"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ServiceError(
                "bad_request", f"route_request needs vehicle, position, destination ({exc})"
            )
        if position not in self.net.node_by_id or destination not in self.net.node_by_id:
            raise ServiceError("bad_request", "position or destination is not a node")
        with self.lock:
            matrix = build_journey_matrix(self.net, self.twin.volumes())
            masked = nav.mask_events(
                matrix, self.twin.event_nodes, self.twin.event_link_pairs()
            )
            try:
                found = nav.dijkstra_fastest(
                    masked, position, destination, self.net.out_neighbors
                )
            except DegenerateRouteRequest as exc:
                raise ServiceError("degenerate_request", str(exc))
        if found is None:
            return {
                "type": "route_response",
                "vehicle": vehicle,
                "route": [],
                "status": "unreachable",
            }
        return {
            "type": "route_response",
            "vehicle": vehicle,
            "route": list(found.nodes),
            "status": "ok",
        }


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        state: ServiceState = self.server.state
        for raw in self.rfile:
            line = raw.strip()
            if not line:
                continue
            reply = None
            try:
                try:
                    msg = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise ServiceError("parse", f"not a JSON line: {exc}")
                if not isinstance(msg, dict):
                    raise ServiceError("parse", "message must be a JSON object")
                mtype = msg.get("type")
                if mtype == "sensor_update":
                    state.apply_sensor_update(msg)
                elif mtype == "route_request":
                    reply = state.plan_route(msg)
                else:
                    raise ServiceError("unknown_type", f"unknown type {mtype!r}")
            except ServiceError as exc:
                reply = {"type": "error", "code": exc.code, "detail": exc.detail}
            except Exception as exc:  # keep the connection alive
                log.exception("internal error handling message")
                reply = {"type": "error", "code": "internal", "detail": str(exc)}
            if reply is not None:
                self.wfile.write(
                    (json.dumps(reply, separators=(",", ":")) + "\n").encode("utf-8")
                )
                self.wfile.flush()


class RouteService(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, scenario: Scenario, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.state = ServiceState(scenario)

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_forever(scenario: Scenario, host: str, port: int) -> None:
    with RouteService(scenario, host, port) as server:
        log.info("route service listening on %s:%d", host, server.port)
        server.serve_forever()

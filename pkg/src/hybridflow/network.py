"""Typed multimodal network: nodes, directed edges, commodities and validation."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional


class Mode(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    VEHICLE = "vehicle"

    @property
    def other(self) -> "Mode":
        return Mode.VEHICLE if self is Mode.PEDESTRIAN else Mode.PEDESTRIAN


class NodeKind(str, enum.Enum):
    ENTRY = "entry"
    EXIT = "exit"
    PARKING = "parking"
    JUNCTION = "junction"


# Parking throughput defaults (subjects/s) when a node gives no flow_rate.
PARKING_DEFAULT_RATE = {Mode.VEHICLE: 1.0, Mode.PEDESTRIAN: 2.0}


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    flow_rate: Optional[float] = None  # None -> kind default
    mode: Optional[Mode] = None  # required for Entry/Exit
    pos: Optional[tuple[float, float]] = None
    stored_vehicles: Optional[float] = None  # Parking only; None = unlimited

    def capacity(self, mode: Mode) -> float:
        """Throughput cap in subjects/s for mass of ``mode`` passing this node."""
        if self.kind is NodeKind.EXIT:
            return math.inf
        if self.flow_rate is not None:
            return float(self.flow_rate)
        if self.kind is NodeKind.PARKING:
            return PARKING_DEFAULT_RATE[mode]
        return math.inf


@dataclass(frozen=True)
class Edge:
    id: str
    source: str
    target: str
    mode: Mode
    length: float
    cell_count: int
    width: Optional[float] = None  # pedestrian edges, meters
    lanes: Optional[int] = None  # vehicle edges

    @property
    def dx(self) -> float:
        return self.length / self.cell_count

    @property
    def cross_section(self) -> float:
        """Width (m) for walkways, lane count for roads; mass = density * dx * cross_section."""
        if self.mode is Mode.PEDESTRIAN:
            return float(self.width if self.width is not None else 1.0)
        return float(self.lanes if self.lanes is not None else 1)


@dataclass(frozen=True)
class Commodity:
    id: str
    origin: str
    destination: str


@dataclass(frozen=True)
class Violation:
    element: str
    message: str

    def __str__(self) -> str:
        return f"{self.element}: {self.message}"


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...] = ()
    edges: tuple[Edge, ...] = ()
    commodities: tuple[Commodity, ...] = field(default=())

    @cached_property
    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def edge_map(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    @cached_property
    def commodity_map(self) -> dict[str, Commodity]:
        return {c.id: c for c in self.commodities}

    @cached_property
    def _incidence(self) -> tuple[dict[str, list[Edge]], dict[str, list[Edge]]]:
        incoming: dict[str, list[Edge]] = {n.id: [] for n in self.nodes}
        outgoing: dict[str, list[Edge]] = {n.id: [] for n in self.nodes}
        for e in sorted(self.edges, key=lambda e: e.id):
            if e.source in outgoing:
                outgoing[e.source].append(e)
            if e.target in incoming:
                incoming[e.target].append(e)
        return incoming, outgoing

    def node_modes(self, node_id: str) -> set[Mode]:
        incoming, outgoing = self._incidence
        return {e.mode for e in incoming[node_id]} | {e.mode for e in outgoing[node_id]}


def adjacent_edges(
    network: Network, node: str, direction: str, mode: Optional[Mode] = None
) -> list[Edge]:
    """Edges entering or leaving ``node``, optionally of one mode, sorted by id."""
    if node not in network.node_map:
        raise KeyError(f"unknown node {node!r}")
    incoming, outgoing = network._incidence
    if direction == "incoming":
        edges = incoming[node]
    elif direction == "outgoing":
        edges = outgoing[node]
    else:
        raise ValueError(f"direction must be 'incoming' or 'outgoing', got {direction!r}")
    return [e for e in edges if mode is None or e.mode is mode]


def modal_subgraph(network: Network, mode: Mode) -> Network:
    edges = tuple(e for e in network.edges if e.mode is mode)
    used = {e.source for e in edges} | {e.target for e in edges}
    nodes = tuple(n for n in network.nodes if n.id in used)
    commodities = tuple(
        c for c in network.commodities if c.origin in used and c.destination in used
    )
    return Network(nodes=nodes, edges=edges, commodities=commodities)


def mode_feasible_path_exists(network: Network, origin: str, destination: str) -> bool:
    """Breadth-first search over (node, mode) states; mode switches only at Parking nodes."""
    start = network.node_map.get(origin)
    if start is None or destination not in network.node_map:
        return False
    start_modes = [start.mode] if start.mode is not None else list(Mode)
    _, outgoing = network._incidence
    seen = {(origin, m) for m in start_modes}
    queue = deque(seen)
    while queue:
        node_id, mode = queue.popleft()
        if node_id == destination:
            return True
        succ = [(e.target, mode) for e in outgoing[node_id] if e.mode is mode]
        if network.node_map[node_id].kind is NodeKind.PARKING:
            succ.append((node_id, mode.other))
        for state in succ:
            if state[0] in network.node_map and state not in seen:
                seen.add(state)
                queue.append(state)
    return False


def _duplicates(ids: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    dup: set[str] = set()
    for i in ids:
        (dup if i in seen else seen).add(i)
    return sorted(dup)


def validate_network(network: Network) -> list[Violation]:
    """Collect every structural violation; an empty list means the network is valid."""
    out: list[Violation] = []
    add = lambda el, msg: out.append(Violation(el, msg))  # noqa: E731

    for kind, ids in (
        ("node", [n.id for n in network.nodes]),
        ("edge", [e.id for e in network.edges]),
        ("commodity", [c.id for c in network.commodities]),
    ):
        for d in _duplicates(ids):
            add(d, f"duplicate {kind} id")

    nodes = network.node_map
    for e in network.edges:
        for end in (e.source, e.target):
            if end not in nodes:
                add(e.id, f"references missing node {end!r}")
        if e.source == e.target:
            add(e.id, "self-loop")
        if not (e.length > 0 and math.isfinite(e.length)):
            add(e.id, "length must be > 0")
        if not (isinstance(e.cell_count, int) and e.cell_count >= 1):
            add(e.id, "cell_count must be an integer >= 1")
        if e.mode is Mode.PEDESTRIAN:
            if e.width is None or not e.width > 0:
                add(e.id, "pedestrian edge needs width > 0")
        elif e.lanes is None or not (isinstance(e.lanes, int) and e.lanes >= 1):
            add(e.id, "vehicle edge needs integer lanes >= 1")

    for n in network.nodes:
        if n.id not in network._incidence[0]:
            continue
        inc = adjacent_edges(network, n.id, "incoming")
        outg = adjacent_edges(network, n.id, "outgoing")
        modes = {e.mode for e in inc + outg}
        if n.flow_rate is not None and not n.flow_rate >= 0:
            add(n.id, "flow_rate must be >= 0")
        if n.kind in (NodeKind.JUNCTION, NodeKind.PARKING) and n.flow_rate is not None:
            if not n.flow_rate > 0:
                add(n.id, f"{n.kind.value} flow_rate must be > 0")
        if n.kind is NodeKind.ENTRY:
            if inc:
                add(n.id, "entry node has incoming edges")
            if not outg:
                add(n.id, "entry node has no outgoing edge")
        elif n.kind is NodeKind.EXIT:
            if outg:
                add(n.id, "exit node has outgoing edges")
            if not inc:
                add(n.id, "exit node has no incoming edge")
        if n.kind in (NodeKind.ENTRY, NodeKind.EXIT):
            if n.mode is None:
                add(n.id, f"{n.kind.value} node needs a mode")
            elif modes - {n.mode}:
                add(n.id, f"{n.kind.value} node of mode {n.mode.value} touches edges of another mode")
        elif n.kind is NodeKind.PARKING:
            if modes != {Mode.PEDESTRIAN, Mode.VEHICLE}:
                add(n.id, "parking node must touch both vehicle and pedestrian edges")
        elif len(modes) > 1:
            add(n.id, "junction node touches edges of both modes")
        if n.stored_vehicles is not None and n.kind is not NodeKind.PARKING:
            add(n.id, "stored_vehicles is only valid on parking nodes")

    for c in network.commodities:
        o, d = nodes.get(c.origin), nodes.get(c.destination)
        if o is None:
            add(c.id, f"origin {c.origin!r} does not exist")
        elif o.kind is not NodeKind.ENTRY:
            add(c.id, f"origin {c.origin!r} is not an entry node")
        if d is None:
            add(c.id, f"destination {c.destination!r} does not exist")
        elif d.kind is not NodeKind.EXIT:
            add(c.id, f"destination {c.destination!r} is not an exit node")
        if o is not None and d is not None:
            if not mode_feasible_path_exists(network, c.origin, c.destination):
                add(c.id, "no mode-feasible path for commodity")

    return sorted(set(out), key=lambda v: (v.element, v.message))

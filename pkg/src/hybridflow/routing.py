"""Shortest-travel-time routing with density-dependent edge weights.

Edge weight is ``length / v(vff; rho_avg)``. Edges whose average density reaches
``theta_close * rho_max`` are closed and removed from the search graph. Search runs
over (node, mode) states; switching mode is only possible at parking nodes and
costs a fixed transfer penalty. Ties between equal-time paths go to the
lexicographically smallest sequence of edge ids.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .flow import FlowParams, velocity
from .network import Edge, Mode, Network, NodeKind
from .solver import EdgeState

TRANSFER = "@transfer"  # next-hop marker: change mode at the current parking node

DEFAULT_THETA_CLOSE = 0.99
DEFAULT_TRANSFER_PENALTY = 60.0


@dataclass(frozen=True)
class EdgeWeight:
    edge: str
    weight: float
    closed: bool = False


def average_density(state: EdgeState) -> float:
    return float(state.totals().mean())


def edge_weight(
    edge: Edge,
    state: Optional[EdgeState],
    params: FlowParams,
    vff: float,
    theta_close: float = DEFAULT_THETA_CLOSE,
) -> EdgeWeight:
    rho = 0.0 if state is None else average_density(state)
    return weight_from_density(edge, rho, params, vff, theta_close)


def weight_from_density(
    edge: Edge, rho_avg: float, params: FlowParams, vff: float, theta_close: float
) -> EdgeWeight:
    if rho_avg >= theta_close * params.rho_max:
        return EdgeWeight(edge.id, float("inf"), True)
    v = velocity(params, vff, min(max(rho_avg, 0.0), params.rho_max))
    return EdgeWeight(edge.id, edge.length / v, False)


def closed_edges(
    states: Iterable[EdgeState],
    params: Optional[Mapping[Mode, FlowParams]] = None,
    theta_close: float = DEFAULT_THETA_CLOSE,
) -> set[str]:
    """Ids of edges whose average total density is at or above ``theta_close * rho_max``."""
    if not 0 < theta_close <= 1:
        raise ValueError("theta_close must lie in (0, 1]")
    out = set()
    for st in states:
        p = params[st.edge.mode] if params is not None else st.params
        if average_density(st) >= theta_close * p.rho_max:
            out.add(st.edge.id)
    return out


WeightLike = Union[EdgeWeight, float]


def _open_weights(network: Network, weights: Mapping[str, WeightLike]) -> dict[str, float]:
    out = {}
    for e in network.edges:
        if e.id not in weights:
            raise KeyError(f"no weight for edge {e.id!r}")
        w = weights[e.id]
        if isinstance(w, EdgeWeight):
            if w.closed:
                continue
            w = w.weight
        if not np.isfinite(w):
            continue
        out[e.id] = float(w)
    return out


def shortest_time_route(
    network: Network,
    weights: Mapping[str, WeightLike],
    origin: str,
    destination: str,
    origin_mode: Optional[Mode] = None,
    transfer_penalty: float = DEFAULT_TRANSFER_PENALTY,
) -> Optional[list[str]]:
    """Fastest open path from ``origin`` to ``destination`` as a list of edge ids.

    Returns None when no open mode-feasible path exists. Path weights are summed
    left to right from the origin.
    """
    nodes = network.node_map
    for nid in (origin, destination):
        if nid not in nodes:
            raise KeyError(f"unknown node {nid!r}")
    w = _open_weights(network, weights)
    _, outgoing = network._incidence
    if origin_mode is None:
        origin_mode = nodes[origin].mode
    starts = [origin_mode] if origin_mode is not None else sorted(Mode, key=lambda m: m.value)

    arrive = nodes[destination].mode
    heap = [(0.0, (), origin, m.value) for m in starts]
    heapq.heapify(heap)
    settled = set()
    while heap:
        dist, path, node, mval = heapq.heappop(heap)
        if (node, mval) in settled:
            continue
        settled.add((node, mval))
        if node == destination and (arrive is None or arrive.value == mval):
            return list(path)
        mode = Mode(mval)
        for e in outgoing[node]:
            if e.mode is mode and e.id in w and (e.target, mval) not in settled:
                heapq.heappush(heap, (dist + w[e.id], path + (e.id,), e.target, mval))
        if nodes[node].kind is NodeKind.PARKING:
            other = mode.other.value
            if (node, other) not in settled:
                heapq.heappush(heap, (dist + transfer_penalty, path, node, other))
    return None


def route_weight(
    network: Network,
    weights: Mapping[str, WeightLike],
    path: list[str],
    origin_mode: Optional[Mode] = None,
    transfer_penalty: float = DEFAULT_TRANSFER_PENALTY,
) -> float:
    """Total travel time of ``path``, including transfer penalties at mode changes."""
    total = 0.0
    mode = origin_mode
    for eid in path:
        e = network.edge_map[eid]
        if mode is not None and e.mode is not mode:
            total += transfer_penalty
        mode = e.mode
        w = weights[eid]
        total += w.weight if isinstance(w, EdgeWeight) else w
    return total


@dataclass(frozen=True)
class RoutingTable:
    """Next hop per (node, commodity, mode): an edge id, TRANSFER, or None (unreachable)."""

    hops: Mapping[str, Mapping[tuple[str, Mode], str]]  # destination -> state -> hop
    destinations: Mapping[str, str]  # commodity -> destination node
    computed_at: float = 0.0
    distances: Mapping[str, Mapping[tuple[str, Mode], float]] = field(default_factory=dict)
    edge_targets: Mapping[str, str] = field(default_factory=dict)

    def next_hop(self, node: str, commodity: str, mode: Mode) -> Optional[str]:
        return self.hops[self.destinations[commodity]].get((node, mode))

    def follow(self, origin: str, commodity: str, mode: Mode, limit: int = 100000) -> list[str]:
        """Hops from ``origin`` until the destination; raises on cycles."""
        dest = self.destinations[commodity]
        table = self.hops[dest]
        node, hops, seen = origin, [], set()
        # arrival states carry no hop; reaching the destination in a foreign mode still does
        while node != dest or (node, mode) in table:
            if (node, mode) in seen or len(hops) > limit:
                raise RuntimeError("routing table contains a cycle")
            seen.add((node, mode))
            hop = self.next_hop(node, commodity, mode)
            if hop is None:
                raise LookupError(f"no route from {node} for {commodity}")
            hops.append(hop)
            if hop == TRANSFER:
                mode = mode.other
            else:
                node = self.edge_targets[hop]
        return hops


def build_routing_table(
    network: Network,
    weights: Mapping[str, WeightLike],
    transfer_penalty: float = DEFAULT_TRANSFER_PENALTY,
    computed_at: float = 0.0,
) -> RoutingTable:
    """Reverse Dijkstra from every commodity destination over the open (node, mode) graph."""
    w = _open_weights(network, weights)
    incoming, _ = network._incidence
    nodes = network.node_map
    hops: dict[str, dict[tuple[str, Mode], str]] = {}
    dists: dict[str, dict[tuple[str, Mode], float]] = {}
    for dest in sorted({c.destination for c in network.commodities}):
        dmode = nodes[dest].mode
        starts = [dmode] if dmode is not None else list(Mode)
        heap = [(0.0, (), dest, m.value, None) for m in starts]
        heapq.heapify(heap)
        settled: dict[tuple[str, Mode], float] = {}
        table: dict[tuple[str, Mode], str] = {}
        while heap:
            dist, path, node, mval, hop = heapq.heappop(heap)
            mode = Mode(mval)
            if (node, mode) in settled:
                continue
            settled[(node, mode)] = dist
            if hop is not None:
                table[(node, mode)] = hop
            for e in incoming[node]:
                if e.mode is mode and e.id in w and (e.source, mode) not in settled:
                    heapq.heappush(heap, (dist + w[e.id], (e.id,) + path, e.source, mval, e.id))
            if nodes[node].kind is NodeKind.PARKING and (node, mode.other) not in settled:
                heapq.heappush(heap, (dist + transfer_penalty, path, node, mode.other.value, TRANSFER))
        hops[dest] = table
        dists[dest] = settled
    return RoutingTable(
        hops=hops,
        destinations={c.id: c.destination for c in network.commodities},
        computed_at=computed_at,
        distances=dists,
        edge_targets={e.id: e.target for e in network.edges},
    )

"""Scenario files: strict JSON parsing into resolved scenario objects, and serialization back to JSON.

Parsing collects every problem it finds (unknown keys, bad types, out-of-range values,
dangling references) and raises a single :class:`ScenarioError` listing them with
their field paths, e.g. ``network.edges[3].to``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

from .flow import DEFAULT_PROFILE, PROFILES, FlowParams
from .network import Commodity, Edge, Mode, Network, Node, NodeKind
from .solver import default_cell_count
from .transform import DEFAULT_OVERFLOW, PRESETS, OccupancyPMF, occupancy_pmf


class ScenarioError(ValueError):
    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("\n".join(f"{loc}: {msg}" if loc else msg for loc, msg in errors))


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-constant injection rate (subjects/s) for one commodity."""

    commodity: str
    schedule: tuple[tuple[float, float, float], ...]

    def mass_between(self, t0: float, t1: float) -> float:
        total = 0.0
        for start, end, rate in self.schedule:
            lo, hi = max(start, t0), min(end, t1)
            if hi > lo:
                total += rate * (hi - lo)
        return total

    @property
    def total(self) -> float:
        return sum(rate * (end - start) for start, end, rate in self.schedule)

    @property
    def end(self) -> float:
        return max((end for _, end, rate in self.schedule if rate > 0), default=0.0)


@dataclass(frozen=True)
class Closure:
    """Scripted blocking of an edge: nothing may enter it during [start, end)."""

    edge: str
    start: float
    end: Optional[float] = None

    def active(self, t: float) -> bool:
        return self.start <= t and (self.end is None or t < self.end)


@dataclass(frozen=True)
class SolverSettings:
    dx_target_pedestrian: float = 2.0
    dx_target_vehicle: float = 10.0
    cfl_factor: float = 0.9
    class_count: int = 5
    theta_close: float = 0.99
    routing_interval_steps: Optional[int] = None  # None -> rebuild at least every 5 s
    transfer_penalty_s: float = 60.0
    seed: int = 0
    transform: str = "stochastic"  # or "deterministic"
    max_sim_time_s: float = 86400.0
    history_interval_s: float = 1.0
    done_fraction: float = 1e-6

    @property
    def deterministic_transform(self) -> bool:
        return self.transform == "deterministic"


@dataclass(frozen=True)
class Scenario:
    network: Network
    flow_params: dict
    occupancy: OccupancyPMF
    demand: tuple[DemandProfile, ...] = ()
    closures: tuple[Closure, ...] = ()
    settings: SolverSettings = field(default_factory=SolverSettings)
    name: str = "scenario"

    def with_settings(self, **changes) -> "Scenario":
        return replace(self, settings=replace(self.settings, **changes))

    def settings_hash(self) -> str:
        return hashlib.sha256(serialize_scenario(self).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------- parsing

_SETTING_RULES: dict[str, tuple] = {
    # key: (type, lo, hi, lo_inclusive)
    "dx_target_pedestrian": (float, 0.0, math.inf, False),
    "dx_target_vehicle": (float, 0.0, math.inf, False),
    "cfl_factor": (float, 0.0, 1.0, False),
    "class_count": (int, 1, 1000, True),
    "theta_close": (float, 0.0, 1.0, False),
    "routing_interval_steps": (int, 1, math.inf, True),
    "transfer_penalty_s": (float, 0.0, math.inf, True),
    "seed": (int, 0, 2**63 - 1, True),
    "transform": (str, None, None, None),
    "max_sim_time_s": (float, 0.0, math.inf, False),
    "history_interval_s": (float, 0.0, math.inf, False),
    "done_fraction": (float, 0.0, 1.0, False),
}
_PARAM_KEYS = {"profile", "gamma", "rho_max", "vff_mean", "vff_std", "vff_max"}


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


class _Reader:
    def __init__(self):
        self.errors: list[tuple[str, str]] = []

    def err(self, loc: str, msg: str):
        self.errors.append((loc, msg))

    def obj(self, value, loc, allowed, required=()) -> Optional[dict]:
        if not isinstance(value, dict):
            self.err(loc, "expected an object")
            return None
        for k in value:
            if k not in allowed:
                self.err(f"{loc}.{k}" if loc else k, "unknown key")
        for k in required:
            if k not in value:
                self.err(loc, f"missing required key {k!r}")
        return value

    def lst(self, value, loc) -> list:
        if value is None:
            return []
        if not isinstance(value, list):
            self.err(loc, "expected a list")
            return []
        return value

    def string(self, d, key, loc, choices=None, default=None, required=True):
        if key not in d:
            return default
        v = d[key]
        if not isinstance(v, str) or not v:
            self.err(f"{loc}.{key}", "expected a non-empty string")
            return default
        if choices is not None and v not in choices:
            self.err(f"{loc}.{key}", f"must be one of {sorted(choices)}, got {v!r}")
            return default
        return v

    def number(self, d, key, loc, default=None, lo=-math.inf, hi=math.inf, lo_incl=True,
               integer=False, nullable=False):
        if key not in d:
            return default
        v = d[key]
        where = f"{loc}.{key}"
        if v is None and nullable:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.err(where, "expected an integer" if integer else "expected a number")
            return default
        if not math.isfinite(v) and hi != math.inf:
            self.err(where, "must be finite")
            return default
        if v < lo or (v == lo and not lo_incl) or v > hi:
            bound = "[" if lo_incl else "("
            self.err(where, f"out of range {bound}{lo}, {hi}]: {v}")
            return default
        return int(v) if integer else float(v)


def _parse_params(r: _Reader, value, loc, mode: Mode) -> Optional[FlowParams]:
    if isinstance(value, str):
        if value not in PROFILES:
            r.err(loc, f"unknown flow profile {value!r}")
            return None
        return PROFILES[value]
    d = r.obj(value, loc, _PARAM_KEYS)
    if d is None:
        return None
    base_name = r.string(d, "profile", loc, choices=PROFILES, default=DEFAULT_PROFILE[mode])
    base = PROFILES[base_name]
    vals = {}
    for f in fields(FlowParams):
        vals[f.name] = r.number(d, f.name, loc, default=getattr(base, f.name), lo=0.0)
    try:
        return FlowParams(**vals)
    except ValueError as exc:
        r.err(loc, str(exc))
        return None


def _parse_occupancy(r: _Reader, value, loc) -> Optional[OccupancyPMF]:
    if value is None:
        return occupancy_pmf(PRESETS["rockavaria2015"], DEFAULT_OVERFLOW)
    d = r.obj(value, loc, {"preset", "counts", "overflow_value"})
    if d is None:
        return None
    overflow = r.number(d, "overflow_value", loc, default=DEFAULT_OVERFLOW, lo=1, integer=True)
    if ("preset" in d) == ("counts" in d):
        r.err(loc, "give exactly one of 'preset' or 'counts'")
        return None
    if "preset" in d:
        name = r.string(d, "preset", loc, choices=PRESETS)
        return None if name is None else occupancy_pmf(PRESETS[name], overflow)
    counts = {}
    for i, pair in enumerate(r.lst(d["counts"], f"{loc}.counts")):
        where = f"{loc}.counts[{i}]"
        if not (isinstance(pair, list) and len(pair) == 2):
            r.err(where, "expected [value, count]")
            continue
        value_, n = pair
        ok_value = (isinstance(value_, int) and not isinstance(value_, bool) and value_ >= 1) or (
            isinstance(value_, str) and value_.startswith(">")
        )
        if not ok_value:
            r.err(where, "value must be an integer >= 1 or an overflow bucket like '>5'")
            continue
        if isinstance(n, bool) or not isinstance(n, (int, float)) or n < 0:
            r.err(where, "count must be a non-negative number")
            continue
        if value_ in counts:
            r.err(where, f"duplicate value {value_!r}")
            continue
        counts[value_] = n
    if not counts or sum(counts.values()) <= 0:
        r.err(f"{loc}.counts", "occupancy counts are all zero")
        return None
    return occupancy_pmf(counts, overflow)


def _parse_network(r: _Reader, value, settings: SolverSettings) -> Optional[Network]:
    d = r.obj(value, "network", {"nodes", "edges", "commodities"}, ("nodes", "edges", "commodities"))
    if d is None:
        return None
    nodes, edges, comms = [], [], []
    node_ids: set[str] = set()
    for i, nd in enumerate(r.lst(d.get("nodes"), "network.nodes")):
        loc = f"network.nodes[{i}]"
        nd = r.obj(nd, loc, {"id", "kind", "mode", "flow_rate", "pos", "stored_vehicles"}, ("id", "kind"))
        if nd is None:
            continue
        nid = r.string(nd, "id", loc)
        kind = r.string(nd, "kind", loc, choices={k.value for k in NodeKind})
        mode = r.string(nd, "mode", loc, choices={m.value for m in Mode})
        rate = r.number(nd, "flow_rate", loc, lo=0.0, nullable=True)
        stored = r.number(nd, "stored_vehicles", loc, lo=0.0, nullable=True)
        pos = None
        if "pos" in nd and nd["pos"] is not None:
            p = nd["pos"]
            if (isinstance(p, list) and len(p) == 2
                    and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in p)):
                pos = (float(p[0]), float(p[1]))
            else:
                r.err(f"{loc}.pos", "expected [x, y]")
        if nid is None or kind is None:
            continue
        if nid in node_ids:
            r.err(f"{loc}.id", f"duplicate node id {nid!r}")
            continue
        node_ids.add(nid)
        nodes.append(Node(nid, NodeKind(kind), rate, Mode(mode) if mode else None, pos, stored))

    edge_ids: set[str] = set()
    for i, ed in enumerate(r.lst(d.get("edges"), "network.edges")):
        loc = f"network.edges[{i}]"
        ed = r.obj(ed, loc, {"id", "from", "to", "mode", "length", "width", "lanes", "cells"},
                   ("id", "from", "to", "mode", "length"))
        if ed is None:
            continue
        eid = r.string(ed, "id", loc)
        src = r.string(ed, "from", loc)
        dst = r.string(ed, "to", loc)
        mode = r.string(ed, "mode", loc, choices={m.value for m in Mode})
        length = r.number(ed, "length", loc, lo=0.0, lo_incl=False)
        cells = r.number(ed, "cells", loc, lo=1, integer=True, nullable=True)
        width = lanes = None
        if mode == Mode.PEDESTRIAN.value:
            width = r.number(ed, "width", loc, default=1.0, lo=0.0, lo_incl=False)
            if "lanes" in ed:
                r.err(f"{loc}.lanes", "lanes is only valid on vehicle edges")
        elif mode == Mode.VEHICLE.value:
            lanes = r.number(ed, "lanes", loc, default=1, lo=1, integer=True)
            if "width" in ed:
                r.err(f"{loc}.width", "width is only valid on pedestrian edges")
        label = f"{loc} (edge {eid!r})"
        for end in (src, dst):
            if end is not None and end not in node_ids:
                r.err(label, f"unknown node {end!r}")
        if None in (eid, src, dst, mode, length):
            continue
        if eid in edge_ids:
            r.err(f"{loc}.id", f"duplicate edge id {eid!r}")
            continue
        edge_ids.add(eid)
        m = Mode(mode)
        if cells is None:
            target = settings.dx_target_pedestrian if m is Mode.PEDESTRIAN else settings.dx_target_vehicle
            cells = default_cell_count(length, target)
        edges.append(Edge(eid, src, dst, m, length, cells, width=width, lanes=lanes))

    comm_ids: set[str] = set()
    for i, cd in enumerate(r.lst(d.get("commodities"), "network.commodities")):
        loc = f"network.commodities[{i}]"
        cd = r.obj(cd, loc, {"id", "origin", "destination"}, ("id", "origin", "destination"))
        if cd is None:
            continue
        cid = r.string(cd, "id", loc)
        o = r.string(cd, "origin", loc)
        dst = r.string(cd, "destination", loc)
        for end in (o, dst):
            if end is not None and end not in node_ids:
                r.err(f"{loc} (commodity {cid!r})", f"unknown node {end!r}")
        if None in (cid, o, dst):
            continue
        if cid in comm_ids:
            r.err(f"{loc}.id", f"duplicate commodity id {cid!r}")
            continue
        comm_ids.add(cid)
        comms.append(Commodity(cid, o, dst))
    return Network(tuple(nodes), tuple(edges), tuple(comms))


def _parse_settings(r: _Reader, value) -> SolverSettings:
    if value is None:
        return SolverSettings()
    d = r.obj(value, "solver", set(_SETTING_RULES))
    if d is None:
        return SolverSettings()
    vals = {}
    for key, (typ, lo, hi, lo_incl) in _SETTING_RULES.items():
        if key not in d:
            continue
        if typ is str:
            v = r.string(d, key, "solver", choices={"stochastic", "deterministic"})
        else:
            v = r.number(d, key, "solver", lo=lo, hi=hi, lo_incl=lo_incl, integer=typ is int,
                         nullable=key == "routing_interval_steps")
        if v is not None or key == "routing_interval_steps":
            vals[key] = v
    return SolverSettings(**vals)


def parse_scenario_dict(data: Any) -> Scenario:
    r = _Reader()
    top = r.obj(data, "", {"name", "network", "flow_params", "occupancy", "demand", "closures", "solver"},
                ("network",))
    if top is None:
        raise ScenarioError(r.errors)
    name = r.string(top, "name", "", default="scenario")
    settings = _parse_settings(r, top.get("solver"))
    network = _parse_network(r, top.get("network"), settings)

    params = {m: PROFILES[DEFAULT_PROFILE[m]] for m in Mode}
    fp = top.get("flow_params")
    if fp is not None:
        fd = r.obj(fp, "flow_params", {m.value for m in Mode})
        for m in Mode:
            if fd is not None and m.value in fd:
                p = _parse_params(r, fd[m.value], f"flow_params.{m.value}", m)
                if p is not None:
                    params[m] = p

    occupancy = _parse_occupancy(r, top.get("occupancy"), "occupancy")

    comm_ids = {c.id for c in network.commodities} if network else set()
    demand = []
    seen_demand = set()
    for i, dd in enumerate(r.lst(top.get("demand"), "demand")):
        loc = f"demand[{i}]"
        dd = r.obj(dd, loc, {"commodity", "schedule"}, ("commodity", "schedule"))
        if dd is None:
            continue
        cid = r.string(dd, "commodity", loc)
        if cid is not None and cid not in comm_ids:
            r.err(f"{loc}.commodity", f"unknown commodity {cid!r}")
            cid = None
        if cid in seen_demand:
            r.err(f"{loc}.commodity", f"duplicate demand for commodity {cid!r}")
            cid = None
        sched = []
        for j, row in enumerate(r.lst(dd.get("schedule"), f"{loc}.schedule")):
            where = f"{loc}.schedule[{j}]"
            if not (isinstance(row, list) and len(row) == 3 and all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in row)):
                r.err(where, "expected [start_s, end_s, rate] with finite numbers")
                continue
            start, end, rate = map(float, row)
            if not (0 <= start < end):
                r.err(where, "need 0 <= start < end")
                continue
            if rate < 0:
                r.err(where, "rate must be >= 0")
                continue
            sched.append((start, end, rate))
        sched.sort()
        for (s0, e0, _), (s1, _, _) in zip(sched, sched[1:]):
            if s1 < e0:
                r.err(f"{loc}.schedule", f"overlapping intervals at t={s1}")
        if cid is not None:
            seen_demand.add(cid)
            demand.append(DemandProfile(cid, tuple(sched)))

    edge_ids = {e.id for e in network.edges} if network else set()
    closures = []
    for i, cd in enumerate(r.lst(top.get("closures"), "closures")):
        loc = f"closures[{i}]"
        cd = r.obj(cd, loc, {"edge", "start", "end"}, ("edge", "start"))
        if cd is None:
            continue
        eid = r.string(cd, "edge", loc)
        start = r.number(cd, "start", loc, lo=0.0)
        end = r.number(cd, "end", loc, lo=0.0, nullable=True)
        if eid is not None and eid not in edge_ids:
            r.err(f"{loc}.edge", f"unknown edge {eid!r}")
            continue
        if start is not None and end is not None and end <= start:
            r.err(f"{loc}.end", "end must be after start")
            continue
        if eid is not None and start is not None:
            closures.append(Closure(eid, start, end))

    if r.errors:
        raise ScenarioError(r.errors)
    demand.sort(key=lambda d: d.commodity)
    return Scenario(network, params, occupancy, tuple(demand), tuple(closures), settings, name)


def parse_scenario(text: str) -> Scenario:
    """Parse scenario JSON text; raises ScenarioError listing every problem found."""
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ScenarioError([(f"line {exc.lineno}, column {exc.colno}", exc.msg)]) from None
    except ValueError as exc:
        raise ScenarioError([("", str(exc))]) from None
    return parse_scenario_dict(data)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# ----------------------------------------------------------------------- serialization

def scenario_to_dict(sc: Scenario) -> dict:
    net = sc.network
    nodes = []
    for n in net.nodes:
        d: dict = {"id": n.id, "kind": n.kind.value}
        if n.mode is not None:
            d["mode"] = n.mode.value
        if n.flow_rate is not None:
            d["flow_rate"] = n.flow_rate
        if n.pos is not None:
            d["pos"] = list(n.pos)
        if n.stored_vehicles is not None:
            d["stored_vehicles"] = n.stored_vehicles
        nodes.append(d)
    edges = []
    for e in net.edges:
        d = {"id": e.id, "from": e.source, "to": e.target, "mode": e.mode.value,
             "length": e.length, "cells": e.cell_count}
        if e.mode is Mode.PEDESTRIAN:
            d["width"] = e.width
        else:
            d["lanes"] = e.lanes
        edges.append(d)
    s = sc.settings
    return {
        "name": sc.name,
        "network": {
            "nodes": nodes,
            "edges": edges,
            "commodities": [{"id": c.id, "origin": c.origin, "destination": c.destination}
                            for c in net.commodities],
        },
        "flow_params": {
            m.value: {f.name: getattr(sc.flow_params[m], f.name) for f in fields(FlowParams)}
            for m in Mode
        },
        "occupancy": {"counts": [[v, c] for v, c in zip(sc.occupancy.values, sc.occupancy.counts)]},
        "demand": [{"commodity": d.commodity, "schedule": [list(row) for row in d.schedule]}
                   for d in sc.demand],
        "closures": [{"edge": c.edge, "start": c.start, "end": c.end} for c in sc.closures],
        "solver": {f.name: getattr(s, f.name) for f in fields(SolverSettings)},
    }


def serialize_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2) + "\n"

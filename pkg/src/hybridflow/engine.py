"""Network time stepping: sources, node coupling, transformation, edge updates, sinks.

Every edge's cells live in one global array ``rho[cell, class, commodity]`` so the
finite-volume update runs as a single vectorized kernel call per step. Each step:

a. refresh the routing table when due (or when a scripted closure toggles)
b. dt is the network-wide CFL step (fixed, as cell sizes are fixed)
c. add entry demand to the entry backlog
d. compute last-cell outflow demand using each commodity's routed downstream density
e. node transfers with flow-rate caps and cell-0 supply, proportional rationing
f. parking conversion; converted mass waits in the node buffer of the new mode
g. advance every edge
h. absorb outflow at exit nodes
i. record statistics and the conservation audit
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .flow import discretize_classes
from .network import Mode, NodeKind, adjacent_edges, validate_network
from .routing import TRANSFER, build_routing_table, weight_from_density
from .scenario import Scenario
from .solver import advance, face_transfers, max_stable_dt, speed_factor
from .transform import ParkingBuffer, flush, transform_step

log = logging.getLogger(__name__)

AUDIT_TOL = 1e-9

_EDGE, _TRANSFER, _EXIT, _HOLD = 0, 1, 2, 3


class ConservationError(RuntimeError):
    pass


class InvalidScenario(ValueError):
    pass


@dataclass
class AuditRow:
    t: float
    persons_in_system: float
    persons_exited: float
    persons_injected: float
    residual: float
    vehicles_in_system: float
    vehicles_exited: float
    vehicles_injected: float
    persons_created: float
    persons_consumed: float
    vehicles_created: float
    vehicles_consumed: float


@dataclass
class RunResults:
    scenario: Scenario
    dt: float
    steps: int
    termination_time: float
    truncated: bool
    edge_ids: list[str]
    edge_first: np.ndarray
    edge_cells: np.ndarray
    commodity_ids: list[str]
    class_count: int
    sample_times: list[float] = field(default_factory=list)
    density: list[np.ndarray] = field(default_factory=list)  # (N,) per sample
    density_by_class: list[np.ndarray] = field(default_factory=list)  # (N, K) per sample
    cum_entered: list[np.ndarray] = field(default_factory=list)  # (C,) per sample
    cum_exited: list[np.ndarray] = field(default_factory=list)
    edge_inflow: list[np.ndarray] = field(default_factory=list)  # (E,) cumulative per sample
    edge_outflow: list[np.ndarray] = field(default_factory=list)
    audit: list[AuditRow] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    occupancy_samples: list = field(default_factory=list)
    persons_flushed: float = 0.0
    vehicles_flushed: float = 0.0
    persons_from_flush: float = 0.0  # created from fractional cars at the end, not in occupancy_samples

    def edge_density(self, sample: int, edge_id: str) -> np.ndarray:
        i = self.edge_ids.index(edge_id)
        f, n = self.edge_first[i], self.edge_cells[i]
        return self.density[sample][f:f + n]

    def edge_average(self, sample: int) -> dict[str, float]:
        d = self.density[sample]
        return {
            eid: float(d[f:f + n].mean())
            for eid, f, n in zip(self.edge_ids, self.edge_first, self.edge_cells)
        }

    @property
    def final_audit(self) -> Optional[AuditRow]:
        return self.audit[-1] if self.audit else None


class _Group:
    """Mass meeting at one node in one mode during a step."""

    __slots__ = ("node", "mode", "kind", "inc", "out", "cap_rate", "tkind", "tedge")

    def __init__(self, node, mode, kind, inc, out, cap_rate):
        self.node = node
        self.mode = mode
        self.kind = kind
        self.inc = inc  # incoming edge indices
        self.out = out  # outgoing edge indices
        self.cap_rate = cap_rate
        self.tkind = None  # per commodity target kind
        self.tedge = None  # per commodity target edge index (or -1)


class Simulation:
    def __init__(self, scenario: Scenario, progress: Optional[Callable[[float, "Simulation"], None]] = None):
        violations = validate_network(scenario.network)
        if violations:
            raise InvalidScenario("; ".join(map(str, violations)))
        self.scenario = sc = scenario
        self.settings = st = scenario.settings
        net = sc.network
        self.network = net
        self.progress = progress

        self.commodities = sorted(c.id for c in net.commodities)
        self.cidx = {c: i for i, c in enumerate(self.commodities)}
        C = self.C = len(self.commodities)
        K = self.K = st.class_count
        self.classes = {m: discretize_classes(sc.flow_params[m], K) for m in Mode}
        self.weights = {m: np.array([c.weight for c in self.classes[m]]) for m in Mode}

        self.edges = sorted(net.edges, key=lambda e: e.id)
        self.eidx = {e.id: i for i, e in enumerate(self.edges)}
        E = len(self.edges)
        counts = np.array([e.cell_count for e in self.edges], dtype=int)
        self.first = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
        self.last = self.first + counts - 1
        self.counts = counts
        N = int(counts.sum())
        cell_edge = np.repeat(np.arange(E), counts)
        self.cell_edge = cell_edge
        modes = [e.mode for e in self.edges]
        self.edge_is_vehicle = np.array([m is Mode.VEHICLE for m in modes])
        pick = lambda attr: np.array([getattr(sc.flow_params[m], attr) for m in modes])[cell_edge]  # noqa: E731
        self.gamma = pick("gamma")
        self.rho_max = pick("rho_max")
        self.edge_rho_max = np.array([sc.flow_params[m].rho_max for m in modes])
        self.vff = np.array([[c.vff for c in self.classes[m]] for m in modes]).reshape(E, K)[cell_edge]
        self.dx = np.array([e.dx for e in self.edges])[cell_edge]
        self.area = np.array([e.cross_section for e in self.edges])[cell_edge]
        self.cell_volume = self.dx * self.area
        self.cell_is_vehicle = self.edge_is_vehicle[cell_edge]
        self.rho = np.zeros((N, K, C))

        self.dt = max_stable_dt(self.edges, sc.flow_params, st.cfl_factor)
        if st.routing_interval_steps is not None:
            self.route_every = st.routing_interval_steps
        else:
            self.route_every = max(1, int(math.floor(5.0 / self.dt)))

        self.groups: list[_Group] = []
        for node in sorted(net.nodes, key=lambda n: n.id):
            for mode in sorted(net.node_modes(node.id), key=lambda m: m.value):
                inc = [self.eidx[e.id] for e in adjacent_edges(net, node.id, "incoming", mode)]
                out = [self.eidx[e.id] for e in adjacent_edges(net, node.id, "outgoing", mode)]
                self.groups.append(_Group(node.id, mode, node.kind, np.array(inc, int), out,
                                          node.capacity(mode)))
        self.buffers = {(g.node, g.mode): np.zeros((K, C)) for g in self.groups}
        self.parking = {}
        for node in net.nodes:
            if node.kind is NodeKind.PARKING:
                ss = np.random.SeedSequence(st.seed, spawn_key=(zlib.crc32(node.id.encode()),))
                self.parking[node.id] = ParkingBuffer(node.id, C, np.random.default_rng(ss),
                                                      node.stored_vehicles)

        self.demand = [(self.cidx[d.commodity], net.commodity_map[d.commodity].origin,
                        net.node_map[net.commodity_map[d.commodity].origin].mode, d)
                       for d in sc.demand]
        self.demand_end = max((d.end for d in sc.demand), default=0.0)
        self.demand_total = sum(d.total for d in sc.demand)
        self.dest_mode = np.array([net.node_map[net.commodity_map[c].destination].mode is Mode.VEHICLE
                                   for c in self.commodities], dtype=bool)

        self.clock = 0.0
        self.step_count = 0
        self.table = None
        self._closure_state: Optional[tuple] = None
        self.injected = {m: 0.0 for m in Mode}
        self.exited = {m: 0.0 for m in Mode}
        self.cum_entered = np.zeros(C)
        self.cum_exited = np.zeros(C)
        self.edge_in = np.zeros(E)
        self.edge_out = np.zeros(E)
        self.flushes = 0
        self._entered_steps: list[np.ndarray] = []
        self._exited_steps: list[np.ndarray] = []
        self._step_times: list[float] = []

    # ------------------------------------------------------------------ helpers

    def closed_by_script(self, t: float) -> set[str]:
        return {c.edge for c in self.scenario.closures if c.active(t)}

    def edge_averages(self) -> np.ndarray:
        totals = self.rho.sum(axis=(1, 2))
        return np.add.reduceat(totals, self.first) / self.counts if len(totals) else np.zeros(0)

    def refresh_routing(self):
        sc, st = self.scenario, self.settings
        avg = self.edge_averages()
        scripted = self.closed_by_script(self.clock)
        weights = {}
        for i, e in enumerate(self.edges):
            p = sc.flow_params[e.mode]
            w = weight_from_density(e, float(avg[i]), p, p.vff_mean, st.theta_close)
            if e.id in scripted:
                w = weight_from_density(e, p.rho_max, p, p.vff_mean, st.theta_close)
            weights[e.id] = w
        self.table = build_routing_table(self.network, weights, st.transfer_penalty_s, self.clock)
        for g in self.groups:
            tk = np.full(self.C, _HOLD, dtype=int)
            te = np.full(self.C, -1, dtype=int)
            for c, cid in enumerate(self.commodities):
                if g.kind is NodeKind.EXIT:
                    tk[c] = _EXIT
                    continue
                hop = self.table.next_hop(g.node, cid, g.mode)
                if hop is None:
                    continue
                if hop == TRANSFER:
                    tk[c] = _TRANSFER
                else:
                    tk[c] = _EDGE
                    te[c] = self.eidx[hop]
            g.tkind, g.tedge = tk, te

    def mass_by_mode(self) -> dict[Mode, float]:
        cell_mass = self.rho.sum(axis=(1, 2)) * self.cell_volume
        veh = float(cell_mass[self.cell_is_vehicle].sum())
        ped = float(cell_mass[~self.cell_is_vehicle].sum())
        for (_, mode), buf in self.buffers.items():
            if mode is Mode.VEHICLE:
                veh += float(buf.sum())
            else:
                ped += float(buf.sum())
        for pb in self.parking.values():
            v, p = pb.held()
            veh += v
            ped += p
        return {Mode.VEHICLE: veh, Mode.PEDESTRIAN: ped}

    def network_mass(self) -> float:
        """Mass on edges and in node buffers (parking accumulators excluded)."""
        total = float((self.rho.sum(axis=(1, 2)) * self.cell_volume).sum())
        return total + sum(float(b.sum()) for b in self.buffers.values())

    def audit(self) -> AuditRow:
        held = self.mass_by_mode()
        ledger = {k: sum(getattr(pb, k) for pb in self.parking.values())
                  for k in ("persons_created", "persons_consumed", "vehicles_created", "vehicles_consumed")}
        V, P = Mode.VEHICLE, Mode.PEDESTRIAN
        res_v = (self.injected[V] + ledger["vehicles_created"] - ledger["vehicles_consumed"]
                 - held[V] - self.exited[V])
        res_p = (self.injected[P] + ledger["persons_created"] - ledger["persons_consumed"]
                 - held[P] - self.exited[P])
        scale = max(1.0, self.injected[V] + self.injected[P]
                    + ledger["persons_created"] + ledger["vehicles_created"])
        return AuditRow(
            t=self.clock,
            persons_in_system=held[P],
            persons_exited=self.exited[P],
            persons_injected=self.injected[P],
            residual=(abs(res_v) + abs(res_p)) / scale,
            vehicles_in_system=held[V],
            vehicles_exited=self.exited[V],
            vehicles_injected=self.injected[V],
            **ledger,
        )

    # --------------------------------------------------------------------- step

    def step(self) -> AuditRow:
        st = self.settings
        dt = self.dt
        t0, t1 = self.clock, self.clock + dt
        K, C = self.K, self.C
        E = len(self.edges)

        scripted = self.closed_by_script(t0)
        closure_state = tuple(sorted(scripted))
        if (self.table is None or self.step_count % self.route_every == 0
                or closure_state != self._closure_state):
            self.refresh_routing()
            self._closure_state = closure_state

        entered = np.zeros(C)
        for c, origin, mode, prof in self.demand:
            m = prof.mass_between(t0, t1)
            if m > 0:
                self.buffers[(origin, mode)][:, c] += m * self.weights[mode]
                self.injected[mode] += m
                entered[c] += m

        rho = self.rho
        totals = rho.sum(axis=(1, 2))
        first, last = self.first, self.last
        supply = np.maximum(self.edge_rho_max - totals[first], 0.0) * self.cell_volume[first]
        for eid in scripted:
            supply[self.eidx[eid]] = 0.0

        # downstream density seen by each edge's last cell, per commodity
        down_last = np.zeros((E, C))
        for g in self.groups:
            if len(g.inc) == 0:
                continue
            d = np.where(g.tkind == _EDGE, totals[first[np.maximum(g.tedge, 0)]], 0.0)
            down_last[g.inc] = d
        s_last = speed_factor(self.gamma[last][:, None], self.rho_max[last][:, None], down_last)
        demand = (rho[last] * self.vff[last][:, :, None] * s_last[:, None, :]
                  * (dt * self.area[last])[:, None, None])  # (E, K, C)

        allowance = np.ones((E, C))
        inflow = np.zeros((E, K, C))
        exited = np.zeros(C)
        transform_in = {}
        for g in self.groups:
            buf = self.buffers[(g.node, g.mode)]
            din = demand[g.inc].sum(axis=0) if len(g.inc) else np.zeros((K, C))
            if g.kind is NodeKind.EXIT:
                exited += din.sum(axis=0) + buf.sum(axis=0)
                buf[:] = 0.0
                continue
            din_c = din.sum(axis=0)
            buf_c = buf.sum(axis=0)
            tk, te = g.tkind, g.tedge
            factor = np.ones(C)
            is_edge = tk == _EDGE
            if is_edge.any():
                load = np.zeros(E)
                np.add.at(load, te[is_edge], (din_c + buf_c)[is_edge])
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    ratio = np.where(load > 0, np.minimum(1.0, supply / np.where(load > 0, load, 1.0)), 1.0)
                factor[is_edge] = ratio[te[is_edge]]
            hold = tk == _HOLD
            moving = np.where(hold, din_c, (din_c + buf_c) * factor)
            through = float(moving.sum())
            cap = g.cap_rate * dt
            node_factor = 1.0 if through <= cap else cap / through
            frac = factor * node_factor
            if len(g.inc):
                allowance[g.inc] = frac
            moved = din * frac + np.where(hold, 0.0, buf * frac)
            buf -= np.where(hold, 0.0, buf * frac)
            if hold.any():
                buf[:, hold] += moved[:, hold]
            for c in np.nonzero(is_edge)[0]:
                inflow[te[c], :, c] += moved[:, c]
            xfer = tk == _TRANSFER
            if xfer.any():
                transform_in[(g.node, g.mode)] = np.where(xfer, moved, 0.0)

        det = st.deterministic_transform
        pmf = self.scenario.occupancy
        for pid in sorted(self.parking):
            cars = transform_in.get((pid, Mode.VEHICLE), np.zeros((K, C)))
            peds = transform_in.get((pid, Mode.PEDESTRIAN), np.zeros((K, C)))
            ped_out, car_out, _ = transform_step(self.parking[pid], cars, peds, pmf,
                                                 self.weights[Mode.VEHICLE],
                                                 self.weights[Mode.PEDESTRIAN], det)
            if ped_out.any():
                self.buffers[(pid, Mode.PEDESTRIAN)] += ped_out
            if car_out.any():
                self.buffers[(pid, Mode.VEHICLE)] += car_out

        down = np.empty_like(totals)
        down[:-1] = totals[1:]
        T = face_transfers(rho, self.vff, self.gamma, self.rho_max, dt * self.area, down)
        outflow = demand * allowance[:, None, :]
        T[last] = outflow
        self.rho = advance(rho, T, first, inflow, self.dx, self.area)

        self.edge_in += inflow.sum(axis=(1, 2))
        self.edge_out += outflow.sum(axis=(1, 2))
        for c in range(C):
            self.exited[Mode.VEHICLE if self.dest_mode[c] else Mode.PEDESTRIAN] += exited[c]
        self.cum_entered += entered
        self.cum_exited += exited

        self.clock = t1
        self.step_count += 1
        return self.checked_audit()

    def checked_audit(self) -> AuditRow:
        row = self.audit()
        if row.residual > AUDIT_TOL:
            raise ConservationError(f"audit residual {row.residual:.3e} at t={self.clock:.3f}")
        return row

    def flush_parking(self):
        pmf = self.scenario.occupancy
        for pid in sorted(self.parking):
            pb = self.parking[pid]
            if pb.is_empty():
                continue
            ped_out, car_out, _ = flush(pb, pmf, self.weights[Mode.VEHICLE],
                                        self.weights[Mode.PEDESTRIAN], self.settings.deterministic_transform)
            self.buffers[(pid, Mode.PEDESTRIAN)] += ped_out
            self.buffers[(pid, Mode.VEHICLE)] += car_out
        self.flushes += 1

    # ---------------------------------------------------------------------- run

    def run(self) -> RunResults:
        st = self.settings
        res = RunResults(
            scenario=self.scenario, dt=self.dt, steps=0, termination_time=0.0, truncated=False,
            edge_ids=[e.id for e in self.edges], edge_first=self.first.copy(),
            edge_cells=self.counts.copy(), commodity_ids=list(self.commodities), class_count=self.K,
        )
        next_sample = st.history_interval_s
        next_progress = 60.0
        eps = st.done_fraction
        stale = False  # a flush changed the ledgers after the last audit row

        def sample():
            res.sample_times.append(self.clock)
            tot = self.rho.sum(axis=2)
            res.density_by_class.append(tot)
            res.density.append(tot.sum(axis=1))
            res.cum_entered.append(self.cum_entered.copy())
            res.cum_exited.append(self.cum_exited.copy())
            res.edge_inflow.append(self.edge_in.copy())
            res.edge_outflow.append(self.edge_out.copy())

        while True:
            if self.clock >= self.demand_end:
                injected = self.injected[Mode.VEHICLE] + self.injected[Mode.PEDESTRIAN]
                threshold = eps * injected
                if self.network_mass() <= threshold and any(not pb.is_empty() for pb in self.parking.values()):
                    self.flush_parking()
                    stale = True
                held = self.mass_by_mode()
                if held[Mode.VEHICLE] + held[Mode.PEDESTRIAN] <= threshold:
                    break
            if self.clock >= st.max_sim_time_s:
                res.truncated = True
                break
            res.audit.append(self.step())
            stale = False
            self._step_times.append(self.clock)
            self._entered_steps.append(self.cum_entered.copy())
            self._exited_steps.append(self.cum_exited.copy())
            if self.clock >= next_sample - 1e-9 * self.dt:
                sample()
                while next_sample <= self.clock + 1e-9 * self.dt:
                    next_sample += st.history_interval_s
            if self.progress is not None and self.clock >= next_progress:
                self.progress(self.clock, self)
                next_progress += 60.0

        if stale:
            res.audit.append(self.checked_audit())
        if self.step_count and (not res.sample_times or res.sample_times[-1] != self.clock):
            sample()
        res.steps = self.step_count
        res.termination_time = self.clock
        res.summary = self._summary()
        res.occupancy_samples = [k for pb in (self.parking[p] for p in sorted(self.parking)) for k in pb.sampled]
        res.persons_flushed = sum(pb.persons_flushed for pb in self.parking.values())
        res.vehicles_flushed = sum(pb.vehicles_flushed for pb in self.parking.values())
        res.persons_from_flush = sum(pb.persons_from_flush for pb in self.parking.values())
        return res

    def _summary(self) -> list[dict]:
        rows = []
        times = np.array(self._step_times)
        ent = np.array(self._entered_steps).reshape(len(times), self.C)
        ext = np.array(self._exited_steps).reshape(len(times), self.C)
        for c, cid in enumerate(self.commodities):
            total_in = float(ent[-1, c]) if len(times) else 0.0
            total_out = float(ext[-1, c]) if len(times) else 0.0
            mean_tt = p95 = 0.0
            if total_in > 0 and total_out > 0:
                f_in = ent[:, c] / total_in
                f_out = ext[:, c] / total_out
                mean_tt = float(np.sum(f_in - f_out) * self.dt)
                # FIFO travel time of the subject at cumulative fraction u, sampled uniformly in u
                u = (np.arange(_LEVELS) + 0.5) / _LEVELS
                tt = _crossing(times, f_out, u) - _crossing(times, f_in, u)
                p95 = float(np.quantile(tt, 0.95))
            rows.append({"commodity": cid, "total_persons": total_out,
                         "mean_travel_time_s": mean_tt, "p95_travel_time_s": p95})
        return rows


_LEVELS = 2000


def _crossing(times: np.ndarray, frac: np.ndarray, level):
    """First times a non-decreasing cumulative fraction reaches ``level`` (linear interpolation)."""
    level = np.atleast_1d(np.asarray(level, dtype=float))
    i = np.searchsorted(frac, level, side="left")
    out = np.empty_like(level)
    last = i >= len(frac)
    first = i == 0
    out[last] = times[-1]
    out[first & ~last] = times[0]
    mid = ~(last | first)
    j = i[mid]
    f0, f1 = frac[j - 1], frac[j]
    t0, t1 = times[j - 1], times[j]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[mid] = np.where(f1 > f0, t0 + (level[mid] - f0) / (f1 - f0) * (t1 - t0), t1)
    return out


def run(scenario: Scenario, progress=None) -> RunResults:
    """Simulate until every subject has left through an exit (or max_sim_time_s)."""
    return Simulation(scenario, progress).run()

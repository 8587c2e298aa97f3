"""Upwind-downwind finite-volume scheme for the per-class conservation law on edges.

Face flux between cells i and i+1 for class k is ``rho_i[k] * v(vff_k; total(rho_{i+1}))``:
mass is taken from the upstream cell, speed is evaluated at the downstream total
density, so a jammed cell (total == rho_max) admits no inflow.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Optional

import numpy as np

from .flow import FlowParams, VelocityClass, speed_factor, velocity
from .network import Edge, Mode

CFL_TOL = 1e-12


class CFLViolation(RuntimeError):
    pass


class NegativeDensity(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeState:
    """Density of one edge: ``rho[cell, class, commodity]``; cell 0 sits at the source node."""

    edge: Edge
    params: FlowParams
    vff: np.ndarray  # (K,) class free-flow speeds
    rho: np.ndarray  # (cells, K, C)

    @classmethod
    def empty(cls, edge: Edge, params: FlowParams, classes: list[VelocityClass], n_commodities: int):
        vff = np.array([c.vff for c in classes], dtype=float)
        rho = np.zeros((edge.cell_count, len(classes), n_commodities))
        return cls(edge, params, vff, rho)

    @property
    def dx(self) -> float:
        return self.edge.dx

    @property
    def cells(self) -> list[np.ndarray]:
        return list(self.rho)

    def totals(self) -> np.ndarray:
        return self.rho.sum(axis=(1, 2))

    def mass(self) -> np.ndarray:
        """Subjects per (class, commodity) on the edge."""
        return self.rho.sum(axis=0) * self.dx * self.edge.cross_section

    def supply(self) -> float:
        """Mass cell 0 can still accept before reaching jam density."""
        free = self.params.rho_max - self.rho[0].sum()
        return max(free, 0.0) * self.dx * self.edge.cross_section


def default_cell_count(length: float, dx_target: float) -> int:
    return max(1, int(round(length / dx_target)))


def total_density(cell) -> float:
    return float(np.sum(cell))


def interface_flux(rho_upwind, rho_downwind_total: float, params: FlowParams, vff: float):
    """Flux density (subjects / s / unit cross-section) through one cell face."""
    return np.asarray(rho_upwind, dtype=float) * velocity(params, vff, rho_downwind_total)


def face_transfers(rho, vff, gamma, rho_max, scale, down_total):
    """Mass crossing each cell's downstream face: ``rho * vff * s(down_total) * dt * area``.

    All per-cell arguments are arrays over the N cells (``vff`` is (N, K), ``scale`` is
    ``dt * cross_section``); the result has the shape of ``rho`` (N, K, C).
    """
    s = speed_factor(gamma, rho_max, down_total)
    return rho * (vff * (s * scale)[:, None])[:, :, None]


def advance(rho, T, first, inflow, dx, area):
    """Apply face transfers ``T`` plus upstream inflow mass, returning new densities."""
    Tin = np.empty_like(T)
    Tin[1:] = T[:-1]
    Tin[first] = inflow
    denom = np.reshape(dx * area, (-1, 1, 1)) if np.ndim(dx * area) else dx * area
    new = rho + (Tin - T) / denom
    if new.size and new.min() < 0:
        if new.min() < -1e-12 * max(1.0, float(np.max(np.abs(rho), initial=0.0))):
            raise NegativeDensity(f"negative density {new.min():.3e} after update")
        np.maximum(new, 0.0, out=new)
    return new


def edge_demand(state: EdgeState, dt: float, rho_down=0.0) -> np.ndarray:
    """Outflow mass per (class, commodity) the last cell would release during ``dt``."""
    rho = state.rho
    C = rho.shape[2]
    down_last = np.broadcast_to(np.asarray(rho_down, dtype=float), (C,)).reshape(1, C)
    last = rho[-1:]
    s = speed_factor(state.params.gamma, state.params.rho_max, down_last)
    return (last * state.vff[None, :, None] * s[:, None, :] * (dt * state.edge.cross_section))[0]


def step_edge(
    state: EdgeState,
    dt: float,
    inflow_mass=None,
    outflow_allowance=1.0,
    rho_down=0.0,
) -> tuple[EdgeState, np.ndarray]:
    """Advance one edge by ``dt``.

    ``inflow_mass`` (K, C) enters cell 0; ``outflow_allowance`` (scalar or broadcastable to
    (K, C)) is the fraction of the downstream-face demand the node accepts; ``rho_down`` is
    the effective density beyond the last cell (scalar or per commodity).
    """
    edge, p = state.edge, state.params
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if dt * p.vff_max / edge.dx > 1.0 + CFL_TOL:
        raise CFLViolation(f"dt={dt} exceeds dx/vff_max={edge.dx / p.vff_max} on {edge.id}")
    rho = state.rho
    n, K, C = rho.shape
    allowance = np.broadcast_to(np.asarray(outflow_allowance, dtype=float), (K, C))
    if np.any(allowance < 0) or np.any(allowance > 1):
        raise ValueError("outflow_allowance must lie in [0, 1]")
    inflow = np.zeros((K, C)) if inflow_mass is None else np.asarray(inflow_mass, dtype=float)
    if np.any(inflow < 0):
        raise ValueError("inflow mass must be >= 0")

    totals = rho.sum(axis=(1, 2))
    down = np.append(totals[1:], 0.0)
    vff = np.broadcast_to(state.vff, (n, K))
    area = edge.cross_section
    T = face_transfers(rho, vff, p.gamma, p.rho_max, dt * area, down)
    demand = edge_demand(state, dt, rho_down)
    outflow = demand * allowance
    T[-1] = outflow
    new = advance(rho, T, np.array([0]), inflow[None], edge.dx, area)
    return replace(state, rho=new), outflow


def max_stable_dt(
    edges: Iterable, params: Mapping[Mode, FlowParams], cfl_factor: float = 0.9
) -> float:
    """Largest global time step: ``cfl_factor * min(dx / vff_max)`` over all edges.

    ``edges`` may hold EdgeState or Edge objects.
    """
    if not 0 < cfl_factor <= 1:
        raise ValueError("cfl_factor must lie in (0, 1]")
    best: Optional[float] = None
    for item in edges:
        edge = item.edge if isinstance(item, EdgeState) else item
        p = item.params if isinstance(item, EdgeState) else params[edge.mode]
        bound = edge.dx / p.vff_max
        best = bound if best is None else min(best, bound)
    if best is None:
        raise ValueError("no edges: cannot derive a time step")
    return cfl_factor * best

"""Car <-> pedestrian conversion at parking nodes.

Arriving vehicle mass accrues per commodity; every whole vehicle releases a sampled
number of passengers. Pedestrians bound for a car accrue toward a sampled group size
and leave as one vehicle when the group completes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Union

import numpy as np

# Passengers per car counted over three festival days (Munich, 2015).
ROCKAVARIA_2015_DAYS = {
    "2015-05-29": {1: 144, 2: 190, 3: 53, 4: 33, 5: 11, ">5": 4},
    "2015-05-30": {1: 98, 2: 263, 3: 62, 4: 54, 5: 15, ">5": 3},
    "2015-05-31": {1: 210, 2: 526, 3: 158, 4: 98, 5: 36, ">5": 2},
}
ROCKAVARIA_2015 = {1: 452, 2: 979, 3: 273, 4: 185, 5: 62, ">5": 9}
PRESETS = {"rockavaria2015": ROCKAVARIA_2015}
DEFAULT_OVERFLOW = 6

WHOLE_TOL = 1e-9

Count = Union[int, float]


@dataclass(frozen=True)
class OccupancyPMF:
    values: tuple[int, ...]
    counts: tuple[Count, ...]

    def __post_init__(self):
        if len(self.values) != len(self.counts) or not self.values:
            raise ValueError("values and counts must be non-empty and equally long")
        if list(self.values) != sorted(set(self.values)):
            raise ValueError("support values must be distinct and sorted")
        if any(v < 1 for v in self.values):
            raise ValueError("occupancy values must be >= 1")
        if any(c < 0 for c in self.counts) or sum(self.counts) <= 0:
            raise ValueError("counts must be non-negative with a positive total")

    @property
    def total(self) -> Count:
        return sum(self.counts)

    @property
    def probabilities(self) -> tuple[float, ...]:
        t = self.total
        return tuple(c / t for c in self.counts)

    def exact_probabilities(self) -> tuple[Fraction, ...]:
        t = Fraction(self.total)
        return tuple(Fraction(c) / t for c in self.counts)

    def exact_mean(self) -> Fraction:
        return sum((v * p for v, p in zip(self.values, self.exact_probabilities())), Fraction(0))

    @property
    def mean(self) -> float:
        return float(self.exact_mean())

    def probability(self, value: int) -> float:
        return dict(zip(self.values, self.probabilities)).get(value, 0.0)


def occupancy_pmf(counts: Mapping, overflow_value: int = DEFAULT_OVERFLOW) -> OccupancyPMF:
    """Build the passengers-per-car pmf from a count table.

    A string key such as ``">5"`` is the open-ended bucket and is mapped to ``overflow_value``.
    """
    merged: dict[int, Count] = {}
    for key, n in counts.items():
        v = overflow_value if isinstance(key, str) and key.startswith(">") else int(key)
        if n < 0:
            raise ValueError(f"negative count for {key!r}")
        merged[v] = merged.get(v, 0) + n
    if sum(merged.values()) <= 0:
        raise ValueError("occupancy counts are all zero")
    values = tuple(sorted(merged))
    return OccupancyPMF(values, tuple(merged[v] for v in values))


def preset(name: str, overflow_value: int = DEFAULT_OVERFLOW) -> OccupancyPMF:
    try:
        return occupancy_pmf(PRESETS[name], overflow_value)
    except KeyError:
        raise KeyError(f"unknown occupancy preset {name!r}") from None


def expected_occupancy(pmf: OccupancyPMF) -> float:
    return pmf.mean


def sample_occupancy(pmf: OccupancyPMF, rng: np.random.Generator, size=None):
    """One draw (an int), or an array of ``size`` draws from the same stream."""
    cdf = np.cumsum(pmf.probabilities)
    idx = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), len(pmf.values) - 1)
    if size is None:
        return pmf.values[int(idx)]
    return np.asarray(pmf.values)[idx]


@dataclass
class ParkingBuffer:
    """Per-commodity conversion state of one parking node plus its mass ledger."""

    node: str
    n_commodities: int
    rng: np.random.Generator
    stored_vehicles: Optional[float] = None
    cars: np.ndarray = field(init=False)
    persons: np.ndarray = field(init=False)
    group_size: list = field(init=False)
    vehicles_consumed: float = 0.0
    persons_created: float = 0.0
    persons_consumed: float = 0.0
    vehicles_created: float = 0.0
    vehicles_flushed: float = 0.0
    persons_flushed: float = 0.0
    persons_from_flush: float = 0.0
    sampled: list = field(default_factory=list)

    def __post_init__(self):
        self.cars = np.zeros(self.n_commodities)
        self.persons = np.zeros(self.n_commodities)
        self.group_size = [None] * self.n_commodities

    def held(self) -> tuple[float, float]:
        """(vehicles, persons) currently waiting in the accumulators."""
        return float(self.cars.sum()), float(self.persons.sum())

    def is_empty(self) -> bool:
        return not (self.cars.any() or self.persons.any())


def _draw(pmf: OccupancyPMF, rng: np.random.Generator, deterministic: bool) -> float:
    return pmf.mean if deterministic else float(sample_occupancy(pmf, rng))


def _spread(totals: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return weights[:, None] * totals[None, :]


def transform_step(
    buffer: ParkingBuffer,
    incoming_car_mass,
    incoming_ped_mass,
    pmf: OccupancyPMF,
    vehicle_weights,
    pedestrian_weights,
    deterministic: bool = False,
):
    """Convert one step's arrivals; returns (pedestrians out, vehicles out, buffer).

    Incoming masses are (classes, commodities) arrays. Outgoing masses are spread over the
    destination mode's velocity classes by their weights.
    """
    car_in = np.asarray(incoming_car_mass, dtype=float)
    ped_in = np.asarray(incoming_ped_mass, dtype=float)
    if np.any(car_in < 0) or np.any(ped_in < 0):
        raise ValueError("negative input mass")
    C = buffer.n_commodities
    if car_in.ndim == 2:
        car_in = car_in.sum(axis=0)
    if ped_in.ndim == 2:
        ped_in = ped_in.sum(axis=0)

    persons_out = np.zeros(C)
    cars_out = np.zeros(C)
    for c in range(C):
        if car_in[c] > 0:
            buffer.cars[c] += car_in[c]
        whole = math.floor(buffer.cars[c] + WHOLE_TOL)
        if whole >= 1:
            n = 0.0
            for _ in range(whole):
                k = _draw(pmf, buffer.rng, deterministic)
                buffer.sampled.append(k)
                n += k
            removed = min(float(whole), buffer.cars[c])
            buffer.cars[c] -= removed
            buffer.vehicles_consumed += removed
            buffer.persons_created += n
            persons_out[c] += n
            if buffer.stored_vehicles is not None:
                buffer.stored_vehicles += whole

        if ped_in[c] > 0:
            buffer.persons[c] += ped_in[c]
        while buffer.persons[c] > 0:
            if buffer.group_size[c] is None:
                buffer.group_size[c] = _draw(pmf, buffer.rng, deterministic)
            g = buffer.group_size[c]
            if buffer.persons[c] + WHOLE_TOL < g:
                break
            if buffer.stored_vehicles is not None and buffer.stored_vehicles < 1:
                break
            removed = min(g, buffer.persons[c])
            buffer.persons[c] -= removed
            buffer.persons_consumed += removed
            buffer.vehicles_created += 1.0
            cars_out[c] += 1.0
            buffer.group_size[c] = None
            if buffer.stored_vehicles is not None:
                buffer.stored_vehicles -= 1

    ped_w = np.asarray(pedestrian_weights, dtype=float)
    veh_w = np.asarray(vehicle_weights, dtype=float)
    return _spread(persons_out, ped_w), _spread(cars_out, veh_w), buffer


def flush(buffer: ParkingBuffer, pmf: OccupancyPMF, vehicle_weights, pedestrian_weights,
          deterministic: bool = False):
    """Release partial units at the end of a run: a fractional car becomes its share of a
    sampled occupancy, an incomplete pedestrian group becomes a partial car."""
    C = buffer.n_commodities
    persons_out = np.zeros(C)
    cars_out = np.zeros(C)
    for c in range(C):
        frac = buffer.cars[c]
        if frac > 0:
            k = _draw(pmf, buffer.rng, deterministic)
            persons_out[c] = frac * k
            buffer.cars[c] = 0.0
            buffer.vehicles_consumed += frac
            buffer.vehicles_flushed += frac
            buffer.persons_created += persons_out[c]
            buffer.persons_from_flush += persons_out[c]
        waiting = buffer.persons[c]
        if waiting > 0:
            g = buffer.group_size[c] or _draw(pmf, buffer.rng, deterministic)
            cars_out[c] = waiting / g
            buffer.persons[c] = 0.0
            buffer.group_size[c] = None
            buffer.persons_consumed += waiting
            buffer.persons_flushed += waiting
            buffer.vehicles_created += cars_out[c]
    return (
        _spread(persons_out, np.asarray(pedestrian_weights, float)),
        _spread(cars_out, np.asarray(vehicle_weights, float)),
        buffer,
    )

"""Fundamental diagram and free-flow-velocity class discretization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .network import Mode


@dataclass(frozen=True)
class FlowParams:
    gamma: float
    rho_max: float
    vff_mean: float
    vff_std: float
    vff_max: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.rho_max > 0:
            raise ValueError("rho_max must be > 0")
        if not self.vff_std >= 0:
            raise ValueError("vff_std must be >= 0")
        if not 0 < self.vff_mean <= self.vff_max:
            raise ValueError("need 0 < vff_mean <= vff_max")


PEDESTRIAN_DEFAULT = FlowParams(gamma=1.913, rho_max=5.4, vff_mean=1.34, vff_std=0.26, vff_max=2.5)
VEHICLE_DEFAULT = FlowParams(gamma=0.04, rho_max=0.133, vff_mean=13.9, vff_std=1.5, vff_max=16.7)

PROFILES = {
    "pedestrian_default": PEDESTRIAN_DEFAULT,
    "vehicle_default": VEHICLE_DEFAULT,
}
DEFAULT_PROFILE = {Mode.PEDESTRIAN: "pedestrian_default", Mode.VEHICLE: "vehicle_default"}


@dataclass(frozen=True)
class VelocityClass:
    vff: float
    weight: float


def velocity(params: FlowParams, vff: float, rho_total: float) -> float:
    """Equilibrium speed of a subject with free-flow speed ``vff`` at total density ``rho_total``.

    ``vff * (1 - exp(-gamma * (1/rho - 1/rho_max)))``, with the rho -> 0 limit returned as ``vff``.
    """
    if rho_total < 0 or rho_total > params.rho_max:
        raise ValueError(f"density {rho_total} outside [0, {params.rho_max}]")
    if vff <= 0:
        raise ValueError("vff must be > 0")
    if rho_total == 0:
        return float(vff)
    return vff * -math.expm1(-params.gamma * (1.0 / rho_total - 1.0 / params.rho_max))


def speed_factor(gamma, rho_max, rho):
    """Vectorized ``v / vff`` for density arrays; 1 at rho == 0, clipped to [0, 1]."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        s = -np.expm1(-gamma * (1.0 / rho - 1.0 / rho_max))
    return np.clip(s, 0.0, 1.0)


def flux(params: FlowParams, vff: float, rho_total: float) -> float:
    return rho_total * velocity(params, vff, rho_total)


def discretize_classes(params: FlowParams, class_count: int) -> list[VelocityClass]:
    """Split the free-flow speed distribution into equal-probability classes.

    The normal(vff_mean, vff_std) law is truncated to (0, vff_max]; each class is
    represented by the conditional mean of its stratum.
    """
    if class_count < 1:
        raise ValueError("class_count must be >= 1")
    mu, sigma = params.vff_mean, params.vff_std
    w = 1.0 / class_count
    if sigma == 0:
        return [VelocityClass(mu, w) for _ in range(class_count)]

    a = (0.0 - mu) / sigma
    b = (params.vff_max - mu) / sigma
    pa, pb = float(ndtr(a)), float(ndtr(b))
    mass = pb - pa
    if mass < 1e-9:
        raise ValueError("truncation interval carries negligible probability mass")

    probs = pa + mass * np.arange(class_count + 1) / class_count
    z = ndtri(probs)
    z[0], z[-1] = a, b
    with np.errstate(over="ignore"):
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    stratum = mass / class_count
    means = mu + sigma * (pdf[:-1] - pdf[1:]) / stratum
    means = np.clip(means, np.nextafter(0.0, 1.0), params.vff_max)
    return [VelocityClass(float(v), w) for v in means]


def truncated_mean(params: FlowParams) -> float:
    mu, sigma = params.vff_mean, params.vff_std
    if sigma == 0:
        return mu
    a, b = -mu / sigma, (params.vff_max - mu) / sigma
    phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)  # noqa: E731
    return mu + sigma * (phi(a) - phi(b)) / float(ndtr(b) - ndtr(a))

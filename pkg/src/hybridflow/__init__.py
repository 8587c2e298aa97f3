"""Macroscopic multimodal (car + pedestrian) flow simulation on networks."""

from .engine import RunResults, Simulation, run
from .flow import PEDESTRIAN_DEFAULT, VEHICLE_DEFAULT, FlowParams, VelocityClass, discretize_classes, velocity
from .network import Commodity, Edge, Mode, Network, Node, NodeKind, validate_network
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .transform import OccupancyPMF, expected_occupancy, occupancy_pmf, sample_occupancy

__version__ = "0.1.0"

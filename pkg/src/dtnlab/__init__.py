"""Capacity, minimum energy and relay scheduling for cell-partitioned delay-tolerant mobile networks."""

from .analysis import (
    CapacityReport,
    EnergyCurve,
    RadioParams,
    capacity,
    delay_bound,
    energy_bounds,
    energy_function,
    probabilities,
)
from .mobility import MobilityModel, iid_matrix, random_walk_matrix
from .topology import CellTopology, build_grid

__version__ = "0.1.0"

__all__ = [
    "CapacityReport",
    "CellTopology",
    "EnergyCurve",
    "MobilityModel",
    "RadioParams",
    "build_grid",
    "capacity",
    "delay_bound",
    "energy_bounds",
    "energy_function",
    "iid_matrix",
    "probabilities",
    "random_walk_matrix",
]

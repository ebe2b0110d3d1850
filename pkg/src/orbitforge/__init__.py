"""Zero-energy connecting orbits by minimizing the Jacobi length."""

from .classify import (
    ClassifiedOrbit,
    bifurcation_sweep,
    classify,
    extend_homoclinic,
    extend_periodic,
    extend_symmetric,
)
from .expr import parse
from .functional import DiscretePath, Endpoint, TimedOrbit, action, jacobi, reparametrize
from .geometry import DomainChart, chart_for, connection_gate, extract_domain
from .potential import Box, builtin, find_critical_points, shift
from .solver import SolveConfig, SolveResult, grid_geodesic_oracle, solve_connecting, solve_symmetric

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ClassifiedOrbit",
    "DiscretePath",
    "DomainChart",
    "Endpoint",
    "SolveConfig",
    "SolveResult",
    "TimedOrbit",
    "action",
    "bifurcation_sweep",
    "builtin",
    "chart_for",
    "classify",
    "connection_gate",
    "extend_homoclinic",
    "extend_periodic",
    "extend_symmetric",
    "extract_domain",
    "find_critical_points",
    "grid_geodesic_oracle",
    "jacobi",
    "parse",
    "reparametrize",
    "shift",
    "solve_connecting",
    "solve_symmetric",
]

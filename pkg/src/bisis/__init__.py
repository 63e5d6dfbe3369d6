"""Competing SIS epidemics on overlaid graphs: thresholds, equilibria and bounds."""

from .dynamics import BiState, IntegratorConfig, VirusParams, integrate, integrate_sis
from .equilibria import (
    CoexistenceEquilibrium,
    Regime,
    classify_regime,
    find_coexistence_equilibria,
    single_sis_equilibrium,
    solve_equilibria,
)
from .graph import Graph, GraphError, load_graph, load_pair

__version__ = "0.1.0"

__all__ = [
    "BiState",
    "CoexistenceEquilibrium",
    "Graph",
    "GraphError",
    "IntegratorConfig",
    "Regime",
    "VirusParams",
    "classify_regime",
    "find_coexistence_equilibria",
    "integrate",
    "integrate_sis",
    "load_graph",
    "load_pair",
    "single_sis_equilibrium",
    "solve_equilibria",
]
